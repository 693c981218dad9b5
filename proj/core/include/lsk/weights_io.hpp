#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "lsk/backbone.hpp"
#include "lsk/tensor_io.hpp"

namespace lsk {

// Weight bundle on disk: a directory with manifest.json mapping role names to
// LSKT tensor files, plus a config echo used to validate on load:
//   { "config": {...}, "tensors": { "dw.0.weight": "dw.0.weight.lskt", ... } }
// Bias vectors and affine parameters are stored as (1,1,1,len) tensors.
void save_weight_bundle(const std::string& dir, const nlohmann::json& config_echo,
                        const std::map<std::string, Tensor>& tensors);

struct WeightBundle {
  nlohmann::json config;
  std::map<std::string, Tensor> tensors;
};
WeightBundle load_weight_bundle(const std::string& dir);

nlohmann::json lsk_config_to_json(const LskConfig& cfg);
LskConfig lsk_config_from_json(const nlohmann::json& j);

std::map<std::string, Tensor> lsk_weights_to_tensors(const LskWeights& w);
// Validates every tensor shape against the config; throws ContractViolation
// on mismatch and IoError for missing entries.
LskWeights lsk_weights_from_tensors(const LskConfig& cfg,
                                    const std::map<std::string, Tensor>& tensors);

void save_lsk_weights(const std::string& dir, const LskConfig& cfg, const LskWeights& w);
LskWeights load_lsk_weights(const std::string& dir, const LskConfig& cfg);

nlohmann::json backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

std::map<std::string, Tensor> backbone_weights_to_tensors(const BackboneWeights& w);
BackboneWeights backbone_weights_from_tensors(const BackboneConfig& cfg,
                                              const std::map<std::string, Tensor>& tensors);

void save_backbone_weights(const std::string& dir, const BackboneConfig& cfg,
                           const BackboneWeights& w);
BackboneWeights load_backbone_weights(const std::string& dir, const BackboneConfig& cfg);

}  // namespace lsk
