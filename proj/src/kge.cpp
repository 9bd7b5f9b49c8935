#include "kgbridge/kge.hpp"

#include "kgbridge/io.hpp"

#include <nlohmann/json.hpp>

namespace kgb {

using nlohmann::json;

void save_kge_model(const std::filesystem::path& dir, const KgeModel<float>& model,
                    const KgeConfig& cfg) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "kge-model/1";
  manifest["dim"] = model.dim();
  manifest["margin"] = cfg.margin;
  manifest["learning_rate"] = cfg.learning_rate;
  manifest["epochs"] = cfg.epochs;
  manifest["negatives_per_positive"] = cfg.negatives_per_positive;
  manifest["seed"] = cfg.seed;
  manifest["entities"] = model.entity_ids;
  manifest["relations"] = model.relation_ids;
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  io::write_f32(dir / "entity_emb.f32", model.entity_emb);
  io::write_f32(dir / "relation_emb.f32", model.relation_emb);
}

KgeModel<float> load_kge_model(const std::filesystem::path& dir) {
  const json manifest = json::parse(io::read_text(dir / "manifest.json"));
  if (manifest.at("format").get<std::string>() != "kge-model/1") {
    throw std::runtime_error("unsupported KGE model format in " + dir.string());
  }
  KgeModel<float> model;
  model.entity_ids = manifest.at("entities").get<std::vector<std::string>>();
  model.relation_ids = manifest.at("relations").get<std::vector<std::string>>();
  for (Index i = 0; i < static_cast<Index>(model.entity_ids.size()); ++i) {
    model.entity_index[model.entity_ids[i]] = i;
  }
  for (Index i = 0; i < static_cast<Index>(model.relation_ids.size()); ++i) {
    model.relation_index[model.relation_ids[i]] = i;
  }
  const Index d = manifest.at("dim").get<Index>();
  model.entity_emb = io::read_f32(dir / "entity_emb.f32",
                                  static_cast<Index>(model.entity_ids.size()), d);
  model.relation_emb = io::read_f32(
      dir / "relation_emb.f32", static_cast<Index>(model.relation_ids.size()), d);
  return model;
}

}  // namespace kgb
