#include "nowcast/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>
#include <tuple>

namespace nowcast::metrics {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::size_t model_rank(const std::string& name) {
  const auto& order = model_order();
  auto it = std::find(order.begin(), order.end(), name);
  return static_cast<std::size_t>(it - order.begin());
}

bool same_setup(const Setup& a, const Setup& b) {
  return a.input_minutes == b.input_minutes && a.lead_minutes == b.lead_minutes;
}

}  // namespace

template <Real T>
Tensor<T> binarize(const Tensor<T>& image, const std::optional<UnitInfo>& unit, double threshold) {
  if (!unit)
    throw UsageError("binarize needs unit metadata (raw hundredths of mm with scale, or binary)");
  std::vector<T> out(image.numel());
  auto in = image.data();
  if (unit->unit == data::Unit::binary) {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<double>(in[i]) >= threshold;
  } else {
    if (!(unit->scale > 0)) throw UsageError("binarize needs a positive normalisation scale");
    if (unit->interval_minutes == 0) throw UsageError("binarize needs a frame interval");
    const double to_rate = unit->scale / 100.0 * unit->rate_factor();
    for (std::size_t i = 0; i < in.size(); ++i)
      out[i] = static_cast<double>(in[i]) * to_rate >= threshold;
  }
  return Tensor<T>(image.shape(), std::move(out));
}

template <Real T>
ConfusionCounts confusion(const Tensor<T>& pred_bin, const Tensor<T>& target_bin) {
  if (pred_bin.shape() != target_bin.shape())
    throw DimensionError("confusion: prediction " + pred_bin.shape().str() + " vs target " +
                         target_bin.shape().str());
  ConfusionCounts c;
  auto p = pred_bin.data();
  auto t = target_bin.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pv = p[i] == T(1), tv = t[i] == T(1);
    if ((!pv && p[i] != T(0)) || (!tv && t[i] != T(0)))
      throw UsageError("confusion expects binary tensors, found value " +
                       std::to_string(!pv && p[i] != T(0) ? p[i] : t[i]));
    if (pv && tv) ++c.tp;
    else if (pv) ++c.fp;
    else if (tv) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Scores scores(const ConfusionCounts& c) {
  Scores s;
  const auto ratio = [](std::uint64_t num, std::uint64_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  s.precision = ratio(c.tp, c.tp + c.fp, s.precision_undefined);
  s.recall = ratio(c.tp, c.tp + c.fn, s.recall_undefined);
  s.accuracy = ratio(c.tp + c.tn, c.total(), s.accuracy_undefined);
  const double pr = s.precision + s.recall;
  s.f1_undefined = pr == 0;
  s.f1 = s.f1_undefined ? 0.0 : 2 * s.precision * s.recall / pr;
  return s;
}

template <Real T>
Predictor<T> model_predictor(const SarUNet<T>& model) {
  SarUNet<T> eval = model;
  eval.set_training(false);
  return [eval](const Tensor<T>& x) { return eval.predict(x); };
}

template <Real T>
Predictor<T> persistence_predictor(std::size_t out_channels) {
  return [out_channels](const Tensor<T>& x) { return persistence_forward(x, out_channels); };
}

template <Real T>
MetricReport evaluate_setup(const Predictor<T>& predict, const data::WindowDataset& test_set,
                            const Setup& setup, std::size_t batch_size, double threshold) {
  if (test_set.size() == 0) throw DataError("test split is empty");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const UnitInfo unit{test_set.series().unit, test_set.scale(), test_set.series().interval_minutes};

  MetricReport r;
  r.setup = setup;
  double sum = 0;
  std::size_t count = 0;
  std::vector<double> lead_sum;
  std::size_t lead_count = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < test_set.size(); begin += batch_size) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(test_set.size(), begin + batch_size); ++i) idx.push_back(i);
    const auto batch = test_set.batch<T>(idx);
    const auto pred = predict(batch.inputs);
    const Shape& s = batch.targets.shape();
    if (pred.shape() != s)
      throw DimensionError("prediction " + pred.shape().str() + " does not match target " + s.str());
    lead_sum.resize(s.c, 0.0);
    auto p = pred.data();
    auto t = batch.targets.data();
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t base = s.offset(n, c, 0, 0);
        double plane = 0;
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double d = static_cast<double>(p[base + i]) - static_cast<double>(t[base + i]);
          plane += d * d;
        }
        sum += plane;
        lead_sum[c] += plane;
      }
    count += p.size();
    lead_count += s.n * s.plane();
    r.counts += confusion(binarize(pred, unit, threshold), binarize(batch.targets, unit, threshold));
  }
  r.mse = sum / static_cast<double>(count);
  r.mse_physical = r.mse * unit.scale * unit.scale;
  for (double v : lead_sum) r.mse_per_lead.push_back(v / static_cast<double>(lead_count));
  r.scores = scores(r.counts);
  return r;
}

void sort_rows(std::vector<MetricReport>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricReport& a, const MetricReport& b) {
    const auto ka = std::make_tuple(a.setup.input_minutes, a.setup.lead_minutes, model_rank(a.setup.model));
    const auto kb = std::make_tuple(b.setup.input_minutes, b.setup.lead_minutes, model_rank(b.setup.model));
    if (ka != kb) return ka < kb;
    return a.setup.model < b.setup.model;
  });
}

void write_report_csv(std::ostream& os, const std::vector<MetricReport>& rows, bool with_setup) {
  if (with_setup) os << "input_minutes,lead_minutes,";
  os << "model,mse,precision,recall,accuracy,f1\n";
  for (const auto& r : rows) {
    if (with_setup) os << r.setup.input_minutes << ',' << r.setup.lead_minutes << ',';
    os << r.setup.model << ',' << fmt("%.9g", r.mse) << ',' << fmt("%.9g", r.scores.precision)
       << ',' << fmt("%.9g", r.scores.recall) << ',' << fmt("%.9g", r.scores.accuracy) << ','
       << fmt("%.9g", r.scores.f1) << '\n';
  }
}

void write_report_table(std::ostream& os, const std::vector<MetricReport>& rows) {
  char line[160];
  auto header = [&] {
    std::snprintf(line, sizeof line, "%-14s %12s %12s %12s %12s %12s\n", "Model", "MSE",
                  "Precision", "Recall", "Accuracy", "F1 score");
    os << line;
  };
  for (std::size_t begin = 0; begin < rows.size();) {
    std::size_t end = begin + 1;
    while (end < rows.size() && same_setup(rows[end].setup, rows[begin].setup)) ++end;
    os << "input " << rows[begin].setup.input_minutes << " min, lead "
       << rows[begin].setup.lead_minutes << " min\n";
    header();

    double best[5] = {rows[begin].mse, -1, -1, -1, -1};
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = rows[i].scores;
      best[0] = std::min(best[0], rows[i].mse);
      best[1] = std::max(best[1], s.precision);
      best[2] = std::max(best[2], s.recall);
      best[3] = std::max(best[3], s.accuracy);
      best[4] = std::max(best[4], s.f1);
    }
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = rows[i].scores;
      const double v[5] = {rows[i].mse, s.precision, s.recall, s.accuracy, s.f1};
      std::string cells;
      for (int k = 0; k < 5; ++k) {
        const std::string cell = fmt("%.6f", v[k]) + (v[k] == best[k] ? "*" : " ");
        std::snprintf(line, sizeof line, " %12s", cell.c_str());
        cells += line;
      }
      std::snprintf(line, sizeof line, "%-14s", rows[i].setup.model.c_str());
      os << line << cells << '\n';
    }
    os << '\n';
    begin = end;
  }
}

void write_average_csv(std::ostream& os, const std::vector<MetricReport>& rows) {
  struct Acc {
    double v[5] = {0, 0, 0, 0, 0};
    std::size_t n = 0;
  };
  std::map<std::pair<std::size_t, std::string>, Acc> by_model;
  for (const auto& r : rows) {
    auto& a = by_model[{model_rank(r.setup.model), r.setup.model}];
    const double v[5] = {r.mse, r.scores.precision, r.scores.recall, r.scores.accuracy, r.scores.f1};
    for (int k = 0; k < 5; ++k) a.v[k] += v[k];
    ++a.n;
  }
  os << "model,mse,precision,recall,accuracy,f1\n";
  for (const auto& [key, a] : by_model) {
    os << key.second;
    for (double v : a.v) os << ',' << fmt("%.9g", v / static_cast<double>(a.n));
    os << '\n';
  }
}

void write_lead_csv(std::ostream& os, const std::vector<MetricReport>& rows) {
  os << "input_minutes,lead_minutes,model,lead_index,mse\n";
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.mse_per_lead.size(); ++k)
      os << r.setup.input_minutes << ',' << r.setup.lead_minutes << ',' << r.setup.model << ','
         << k << ',' << fmt("%.9g", r.mse_per_lead[k]) << '\n';
}

#define NOWCAST_INSTANTIATE_METRICS(T)                                                      \
  template Tensor<T> binarize<T>(const Tensor<T>&, const std::optional<UnitInfo>&, double); \
  template ConfusionCounts confusion<T>(const Tensor<T>&, const Tensor<T>&);                \
  template Predictor<T> model_predictor<T>(const SarUNet<T>&);                              \
  template Predictor<T> persistence_predictor<T>(std::size_t);                              \
  template MetricReport evaluate_setup<T>(const Predictor<T>&, const data::WindowDataset&,  \
                                          const Setup&, std::size_t, double);

NOWCAST_INSTANTIATE_METRICS(float)
NOWCAST_INSTANTIATE_METRICS(double)
#undef NOWCAST_INSTANTIATE_METRICS

}  // namespace nowcast::metrics
