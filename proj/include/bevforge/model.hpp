#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bevforge/bev.hpp"
#include "bevforge/checkpoint.hpp"
#include "bevforge/config.hpp"
#include "bevforge/field.hpp"
#include "bevforge/tmae.hpp"

namespace bevforge {

// The two disjoint pathways plus heads. The geometric encoder feeds the
// density field; the semantic encoder (with mask propagation) feeds the
// voxel lifting.
struct Model {
  FeatureEncoder geo_encoder;
  FeatureEncoder sem_encoder;
  FieldModel field;
  Tensor mask_token;
  ReconHead recon_head;
  BevHead bev_head;

  static Model create(const Config& cfg, Rng& rng);

  std::vector<std::pair<std::string, Tensor>> named_params();
  // Pretraining optimizes both pathways; the token only participates when
  // masking is active, the BEV head never does.
  std::vector<Tensor> pretrain_params(Pathways mode, bool include_token);
  // Finetuning drops the reconstruction head and token.
  std::vector<Tensor> finetune_params();

  void load_from(const Checkpoint& ckpt);  // by name, shapes must match
};

}  // namespace bevforge
