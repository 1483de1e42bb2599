#include <nowcast/model.hpp>

int main() {
  const nowcast::ModelConfig cfg{.in_channels = 2, .base_channels = 2, .cbam_reduction = 2};
  const nowcast::SarUNet<float> model(cfg, 0);
  return model.parameters().empty() ? 1 : 0;
}
