#include "manifest.hpp"

#include <fstream>
#include <iterator>
#include <memory>

#include <openssl/evp.h>

#include "nowcast/errors.hpp"

namespace nowcast::cli {

std::string git_blob_sha1(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read '" + file.string() + "'");
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(content.size()) + '\0';

  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error("SHA-1 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

RunManifest::RunManifest(std::string command, std::vector<std::string> args) {
  json_["command"] = std::move(command);
  json_["args"] = std::move(args);
  json_["config"] = nlohmann::json::object();
  json_["inputs"] = nlohmann::json::array();
  json_["outputs"] = nlohmann::json::array();
  json_["timings"] = nlohmann::json::object();
}

void RunManifest::add_input(const std::filesystem::path& file) {
  json_["inputs"].push_back({{"path", file.string()}, {"sha1", git_blob_sha1(file)}});
}

void RunManifest::add_output(const std::filesystem::path& file) {
  json_["outputs"].push_back({{"path", file.string()}, {"sha1", git_blob_sha1(file)}});
}

void RunManifest::write(const std::filesystem::path& file) {
  const std::chrono::duration<double> total = std::chrono::steady_clock::now() - started_;
  json_["timings"]["total_seconds"] = total.count();
  std::ofstream out(file);
  out << json_.dump(2) << '\n';
  if (!out) throw DataError("failed writing manifest '" + file.string() + "'");
}

}  // namespace nowcast::cli
