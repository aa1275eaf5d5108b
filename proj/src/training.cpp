#include "morph/training.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>

namespace morph::training {

using models::ClassifierF;
using morphnet::MorphNetWork;

std::string history_csv(const std::vector<MorphEpochStats>& history) {
  std::string out = "epoch,cls,rec,den,total,wall_seconds\n";
  char line[160];
  for (const auto& e : history) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f,%.3f\n", e.epoch, e.cls, e.rec,
                  e.den, e.total, e.wall_seconds);
    out += line;
  }
  return out;
}

MorphTrainResult train_morphnet(const ClassifierF& f_clean_in, const LabeledDataset& data,
                                const MorphTrainConfig& cfg) {
  require(cfg.epochs >= 1 && cfg.batch_size >= 1, "train_morphnet: bad epochs/batch_size");
  require(cfg.lr > 0, "train_morphnet: bad learning rate");
  require(cfg.target_policy == "random" || cfg.target_policy == "all",
          "train_morphnet: target_policy must be random or all");
  require(cfg.optimizer == "adam" || cfg.optimizer == "sgd",
          "train_morphnet: optimizer must be adam or sgd");
  require(cfg.weights.lambda >= 0 && cfg.weights.theta >= 0,
          "train_morphnet: loss weights must be non-negative");
  data.validate();
  require(!data.records.empty(), "train_morphnet: empty dataset");

  // Work on a copy so the caller's classifier stays bit-identical; only its
  // gradient buffers are used here, never its weights.
  ClassifierF f_clean = f_clean_in;
  const int c = f_clean.num_classes();
  require(c == data.num_classes, "train_morphnet: classifier/dataset class count mismatch");
  const int n_pts = data.points_per_cloud;

  const double clean_acc = models::accuracy(f_clean, data);
  if (clean_acc < 0.8)
    std::fprintf(stderr,
                 "warning: clean classifier accuracy %.3f is below 0.8; "
                 "generator supervision may be weak\n",
                 clean_acc);

  MorphTrainResult res;
  Rng init_rng = Rng::derive(cfg.seed, 100);
  res.net.init(init_rng, c, n_pts, cfg.n_blocks, cfg.residual_mode, cfg.no_residual, cfg.seed);
  nn::ParamList<float> params;
  res.net.params(params);
  nn::ParamList<float> fc_params = f_clean.params();

  nn::AdamOpt<float> adam;
  adam.lr = static_cast<float>(cfg.lr);
  nn::SgdOpt<float> sgd;
  sgd.lr = static_cast<float>(cfg.lr);

  const geo::OutlierParams den_params{cfg.den_k,
                                      cfg.den_m > 0 ? cfg.den_m : geo::scaled_m(n_pts)};
  const float lambda = static_cast<float>(cfg.weights.lambda);
  const float theta = static_cast<float>(cfg.weights.theta);
  const int n_blocks = cfg.n_blocks;

  MorphNetWork<float> work;
  models::ClassifierWork<float> cwork;
  Mat<float> dlogits(1, c);
  CloudF dcls(n_pts, 3);
  std::vector<CloudF> dinter(n_blocks);

  std::vector<size_t> order(data.records.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng erng = Rng::derive(cfg.seed, 200, static_cast<uint64_t>(epoch));
    erng.shuffle(order);

    double sum_cls = 0, sum_rec = 0, sum_den = 0;
    size_t epoch_pairs = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t stop = std::min(order.size(), start + cfg.batch_size);
      nn::zero_grads(params);
      nn::zero_grads(fc_params);
      int pairs = 0;

      for (size_t bi = start; bi < stop; ++bi) {
        const Record& rec = data.records[order[bi]];
        const CloudF& x = rec.cloud;
        int first_t = 0, last_t = c - 1;
        if (cfg.target_policy == "random")
          first_t = last_t = static_cast<int>(erng.uniform_index(static_cast<size_t>(c)));

        for (int t = first_t; t <= last_t; ++t) {
          const CloudF& final_out = morphnet_forward(res.net, x, t, work);
          for (auto& g : dinter) g.resize(n_pts, 3);

          models::forward(f_clean, final_out, cwork);
          const float part_cls =
              nn::softmax_xent(cwork.logits(f_clean).data(), c, t, dlogits.data());
          models::backward(f_clean, final_out, cwork, dlogits, &dcls);
          auto& dfinal = dinter[n_blocks - 1];
          for (size_t j = 0; j < dcls.v.size(); ++j) dfinal.v[j] += dcls.v[j];

          float part_rec = 0;
          for (int k = 0; k < n_blocks; ++k)
            part_rec += geo::chamfer_distance<float>(x, work.intermediate(k), nullptr,
                                                     &dinter[k], lambda);

          float part_den = 0;
          if (theta > 0)
            part_den = geo::outlier_score_with_grad<float>(final_out, den_params, dfinal, theta);
          else
            part_den = geo::outlier_score<float>(final_out, den_params);

          const LossParts<float> parts{part_cls, part_rec, part_den};
          float total;
          try {
            total = total_loss(parts, cfg.weights);
          } catch (const NumericalError& e) {
            throw NumericalError("train_morphnet diverged at epoch " + std::to_string(epoch) +
                                 ", record " + std::to_string(order[bi]) + ": " + e.what());
          }
          (void)total;

          morphnet_backward(res.net, work, dinter);
          sum_cls += part_cls;
          sum_rec += part_rec;
          sum_den += part_den;
          ++pairs;
        }
      }

      nn::scale_grads(params, 1.0f / pairs);
      if (!nn::grads_finite(params))
        throw NumericalError("train_morphnet: non-finite gradients at epoch " +
                             std::to_string(epoch));
      if (cfg.optimizer == "adam")
        adam.step(params);
      else
        sgd.step(params);
      epoch_pairs += pairs;
    }

    MorphEpochStats st;
    st.epoch = epoch;
    st.cls = sum_cls / epoch_pairs;
    st.rec = sum_rec / epoch_pairs;
    st.den = sum_den / epoch_pairs;
    st.total = st.cls + cfg.weights.lambda * st.rec + cfg.weights.theta * st.den;
    st.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.push_back(st);
  }
  return res;
}

}  // namespace morph::training
