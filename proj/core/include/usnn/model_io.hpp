#pragma once

#include <optional>
#include <string>

#include "usnn/stacking.hpp"

namespace usnn {

/// Network <-> JSON with bit-exact parameters (hex-float encoding), plus the
/// architecture and seeds. load(save(net)) reproduces every parameter bit.
std::string network_to_json(const Network& net);
Network network_from_json(const std::string& text);
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

/// A trained two-tier predictor as one file: the base UQ setting (with its
/// member networks and inference seed), the meta network, and the meta
/// feature layout it was trained with.
struct UsnnModel {
  UqSetting base;
  Network meta;
  double tau = 0.1;
  MetaFeatureLayout layout;
  std::optional<Standardizer> standardizer;
};

void save_model(const UsnnModel& model, const std::string& path);
UsnnModel load_model(const std::string& path);

}  // namespace usnn
