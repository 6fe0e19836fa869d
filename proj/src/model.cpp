#include "bevforge/model.hpp"

#include <map>

namespace bevforge {

Model Model::create(const Config& cfg, Rng& rng) {
  Model m;
  m.geo_encoder = FeatureEncoder::create(cfg.enc_channels, rng);
  m.sem_encoder = FeatureEncoder::create(cfg.enc_channels, rng);
  m.field = FieldModel::create(cfg.enc_channels[2], cfg.pe_bands, cfg.field_hidden, cfg.d_max,
                               rng);
  m.mask_token = randn({cfg.enc_channels[2]}, rng, 0.02, true);
  m.recon_head = ReconHead::create(cfg.enc_channels[2], cfg.recon_hidden, rng);
  m.bev_head = BevHead::create(cfg.enc_channels[2], cfg.bev_hidden, cfg.num_classes, rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&](const std::string& prefix, std::vector<Tensor> params) {
    int i = 0;
    for (Tensor& p : params) out.emplace_back(prefix + "." + std::to_string(i++), p);
  };
  push("geo_encoder", geo_encoder.params());
  push("sem_encoder", sem_encoder.params());
  push("field", field.params());
  out.emplace_back("mask_token", mask_token);
  push("recon_head", recon_head.params());
  push("bev_head", bev_head.params());
  return out;
}

std::vector<Tensor> Model::pretrain_params(Pathways mode, bool include_token) {
  std::vector<Tensor> out;
  auto extend = [&](std::vector<Tensor> p) { out.insert(out.end(), p.begin(), p.end()); };
  extend(geo_encoder.params());
  extend(field.params());
  if (mode != Pathways::kGeometric) {
    extend(sem_encoder.params());
    if (include_token) out.push_back(mask_token);
    extend(recon_head.params());
  }
  return out;
}

std::vector<Tensor> Model::finetune_params() {
  std::vector<Tensor> out;
  auto extend = [&](std::vector<Tensor> p) { out.insert(out.end(), p.begin(), p.end()); };
  extend(geo_encoder.params());
  extend(sem_encoder.params());
  extend(field.params());
  extend(bev_head.params());
  return out;
}

void Model::load_from(const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> stored;
  for (const auto& [name, tensor] : ckpt.params) stored[name] = &tensor;
  for (auto& [name, tensor] : named_params()) {
    auto it = stored.find(name);
    if (it == stored.end()) throw IoError("checkpoint: missing parameter " + name);
    if (it->second->shape() != tensor.shape())
      throw IoError("checkpoint: shape mismatch for " + name);
    tensor.mutable_data() = it->second->data();
  }
}

}  // namespace bevforge
