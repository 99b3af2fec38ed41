#pragma once

// Binary checkpoints: an 8-byte little-endian header length, a UTF-8 JSON
// header, then every tensor as little-endian IEEE-754 doubles in header order.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "edgeprune/nnet.hpp"

namespace edgeprune::nnet {

nlohmann::json arch_to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const nlohmann::json& j);

void save_params(const std::string& path, const ArchSpec& arch, const ParamSet& params);
void load_params(const std::string& path, ArchSpec& arch, ParamSet& params);

void save_mask(const std::string& path, const ArchSpec& arch, const Mask& mask);
Mask load_mask(const std::string& path, ArchSpec* arch = nullptr);

}  // namespace edgeprune::nnet
