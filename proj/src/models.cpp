#include "morph/models.hpp"

#include <json.hpp>

#include <cmath>
#include <numeric>

#include "morph/augment.hpp"
#include "morph/fsio.hpp"

using nlohmann::json;

namespace morph::models {

namespace {

int argmax_row(const float* v, int c) {
  int best = 0;
  for (int i = 1; i < c; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace

TrainResult train_classifier(const LabeledDataset& data, const TrainConfig& cfg) {
  data.validate();
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (cfg.lr <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (cfg.optimizer != "sgd" && cfg.optimizer != "adam")
    throw ConfigError("train: unknown optimizer " + cfg.optimizer);

  TrainResult res;
  res.model.arch = cfg.arch;
  Rng init_rng = Rng::derive(cfg.seed, 100);
  res.model.init(init_rng, data.num_classes);
  auto params = res.model.params();

  nn::SgdOpt<float> sgd;
  sgd.momentum = static_cast<float>(cfg.momentum);
  nn::AdamOpt<float> adam;

  const int n = (int)data.records.size();
  const int c = data.num_classes;
  const int decay1 = (cfg.epochs * 2) / 3;
  const int decay2 = (cfg.epochs * 5) / 6;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  ClassifierWork<float> w;
  Mat<float> dlogits(1, c);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_e = cfg.lr * (epoch >= decay2 ? 0.01 : epoch >= decay1 ? 0.1 : 1.0);
    sgd.lr = static_cast<float>(lr_e);
    adam.lr = static_cast<float>(lr_e);
    Rng erng = Rng::derive(cfg.seed, 200, (uint64_t)epoch);
    erng.shuffle(order);

    double epoch_loss = 0.0;
    int correct = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, n - start);
      nn::zero_grads(params);
      for (int b = 0; b < bs; ++b) {
        const Record& rec = data.records[order[start + b]];
        CloudF x = rec.cloud;
        if (cfg.augment_rotate) x = aug::rotate24(x, erng);
        if (cfg.augment_jitter) x = aug::scale_jitter(x, erng);
        forward(res.model, x, w);
        const Mat<float>& lg = w.logits(res.model);
        const float loss = nn::softmax_xent(lg.data(), c, rec.label, dlogits.data());
        if (!std::isfinite(loss))
          throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
        epoch_loss += loss;
        if (argmax_row(lg.data(), c) == rec.label) ++correct;
        backward(res.model, x, w, dlogits);
      }
      nn::scale_grads(params, 1.0f / bs);
      if (!nn::grads_finite(params))
        throw NumericalError("train: non-finite gradient at epoch " + std::to_string(epoch));
      if (cfg.optimizer == "sgd")
        sgd.step(params);
      else
        adam.step(params);
    }
    res.history.push_back({epoch, epoch_loss / n, (double)correct / n, lr_e});
  }
  return res;
}

double accuracy(const ClassifierF& model, const LabeledDataset& data) {
  ClassifierWork<float> w;
  int correct = 0;
  for (const Record& rec : data.records) {
    forward(model, rec.cloud, w);
    if (argmax_row(w.logits(model).data(), model.num_classes()) == rec.label) ++correct;
  }
  return data.records.empty() ? 0.0 : (double)correct / data.records.size();
}

std::vector<double> per_class_accuracy(const ClassifierF& model, const LabeledDataset& data) {
  std::vector<int> correct(data.num_classes, 0), total(data.num_classes, 0);
  ClassifierWork<float> w;
  for (const Record& rec : data.records) {
    forward(model, rec.cloud, w);
    ++total[rec.label];
    if (argmax_row(w.logits(model).data(), model.num_classes()) == rec.label)
      ++correct[rec.label];
  }
  std::vector<double> out(data.num_classes, 0.0);
  for (int i = 0; i < data.num_classes; ++i)
    if (total[i] > 0) out[i] = (double)correct[i] / total[i];
  return out;
}

void save_classifier(const ClassifierF& model, const std::string& dir, uint64_t seed,
                     int epoch) {
  auto& mutable_model = const_cast<ClassifierF&>(model);
  const auto params = mutable_model.params();

  json layout = json::array();
  size_t total = 0;
  for (const auto& s : params) {
    layout.push_back({{"name", s.name}, {"size", s.n}});
    total += s.n;
  }
  json meta = {
      {"format_version", 1}, {"kind", "classifier"},      {"arch", model.arch},
      {"num_classes", model.num_classes()},               {"seed", seed},
      {"epoch", epoch},      {"layout", layout},
  };
  fsio::write_text_atomic(dir + "/meta.json", meta.dump(2) + "\n");

  std::vector<float> blob;
  blob.reserve(total);
  for (const auto& s : params) blob.insert(blob.end(), s.p, s.p + s.n);
  fsio::write_file_atomic(dir + "/params.f32", blob.data(), blob.size() * sizeof(float));
}

ClassifierF load_classifier(const std::string& dir) {
  json meta;
  try {
    meta = json::parse(fsio::read_text(dir + "/meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed checkpoint meta in " + dir + ": " + e.what());
  }
  if (meta.value("kind", "") != "classifier")
    throw ConfigError("checkpoint in " + dir + " is not a classifier");

  ClassifierF model;
  model.arch = meta.at("arch").get<std::string>();
  Rng rng(0);
  model.init(rng, meta.at("num_classes").get<int>());
  const auto params = model.params();

  const auto bytes = fsio::read_file(dir + "/params.f32");
  const auto layout = meta.at("layout");
  size_t total = 0;
  if (layout.size() != params.size())
    throw ConfigError("checkpoint layout mismatch in " + dir);
  for (size_t i = 0; i < params.size(); ++i) {
    if (layout[i].at("name").get<std::string>() != params[i].name ||
        layout[i].at("size").get<size_t>() != params[i].n)
      throw ConfigError("checkpoint layout mismatch in " + dir + " at slot " +
                        std::string(params[i].name));
    total += params[i].n;
  }
  if (bytes.size() != total * sizeof(float))
    throw ConfigError("checkpoint params.f32 size mismatch in " + dir);
  const float* src = reinterpret_cast<const float*>(bytes.data());
  for (const auto& s : params) {
    std::copy(src, src + s.n, s.p);
    src += s.n;
  }
  return model;
}

}  // namespace morph::models
