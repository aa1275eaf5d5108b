#include "morph/morphnet.hpp"

#include <algorithm>

#include "json.hpp"
#include "morph/fsio.hpp"

namespace morph::morphnet {

using nlohmann::json;

void save_morphnet(const MorphNetF& net, const std::string& dir, uint64_t seed, int epoch) {
  auto& mutable_net = const_cast<MorphNetF&>(net);
  nn::ParamList<float> params;
  mutable_net.params(params);

  json layout = json::array();
  size_t total = 0;
  for (const auto& s : params) {
    layout.push_back({{"name", s.name}, {"size", s.n}});
    total += s.n;
  }
  json meta = {
      {"format_version", 1},
      {"kind", "morphnet"},
      {"num_classes", net.c},
      {"n_points", net.n_points},
      {"n_blocks", net.n_blocks()},
      {"residual_mode", net.residual_mode},
      {"no_residual", net.no_residual},
      {"grid_seed", net.grid_seed},
      {"seed", seed},
      {"epoch", epoch},
      {"layout", layout},
  };
  fsio::write_text_atomic(dir + "/meta.json", meta.dump(2) + "\n");

  std::vector<float> blob;
  blob.reserve(total);
  for (const auto& s : params) blob.insert(blob.end(), s.p, s.p + s.n);
  fsio::write_file_atomic(dir + "/params.f32", blob.data(), blob.size() * sizeof(float));
}

MorphNetF load_morphnet(const std::string& dir) {
  json meta;
  try {
    meta = json::parse(fsio::read_text(dir + "/meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint meta in " + dir + ": " + e.what());
  }
  if (meta.value("kind", "") != "morphnet")
    throw ConfigError("checkpoint in " + dir + " is not a morphnet");

  MorphNetF net;
  Rng rng(0);
  net.init(rng, meta.at("num_classes").get<int>(), meta.at("n_points").get<int>(),
           meta.at("n_blocks").get<int>(), meta.at("residual_mode").get<std::string>(),
           meta.value("no_residual", false), meta.at("grid_seed").get<uint64_t>());
  nn::ParamList<float> params;
  net.params(params);

  const auto bytes = fsio::read_file(dir + "/params.f32");
  const auto layout = meta.at("layout");
  size_t total = 0;
  if (layout.size() != params.size())
    throw ConfigError("checkpoint layout mismatch in " + dir);
  for (size_t i = 0; i < params.size(); ++i) {
    if (layout[i].at("name").get<std::string>() != params[i].name ||
        layout[i].at("size").get<size_t>() != params[i].n)
      throw ConfigError("checkpoint layout mismatch in " + dir + " at slot " + params[i].name);
    total += params[i].n;
  }
  if (bytes.size() != total * sizeof(float))
    throw ConfigError("checkpoint params.f32 size mismatch in " + dir);
  const float* src = reinterpret_cast<const float*>(bytes.data());
  for (const auto& s : params) {
    std::copy(src, src + s.n, s.p);
    src += s.n;
  }
  return net;
}

} // namespace morph::morphnet
