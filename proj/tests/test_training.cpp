#include <cmath>
#include <vector>

#include "doctest.h"
#include "morph/models.hpp"
#include "morph/training.hpp"

using namespace morph;
using namespace morph::training;

namespace {

template <class T>
Cloud<T> random_cloud(Rng& rng, int n) {
  Cloud<T> c(n, 3);
  for (auto& v : c.v) v = static_cast<T>(rng.uniform() * 2.0 - 1.0);
  return c;
}

template <class T>
models::Classifier<T> zeroed_classifier(int c) {
  models::Classifier<T> m;
  Rng rng(1);
  m.init(rng, c);
  for (auto& s : m.params()) std::fill(s.p, s.p + s.n, T(0));
  return m;
}

LabeledDataset tiny_dataset(int per_class, uint64_t seed) {
  DataSpec spec;
  spec.families = {"sphere", "cube", "torus"};
  spec.samples_per_class = per_class;
  spec.n_points = 24;
  spec.noise_sigma = 0.01;
  return generate_synthetic_dataset(spec, seed, "train");
}

}  // namespace

TEST_CASE("total loss weighting") {
  LossWeights w{0.05, 0.02};
  CHECK(total_loss<double>({1.0, 2.0, 3.0}, w) == doctest::Approx(1.16));

  LossWeights theta_off{0.05, 0.0};
  CHECK(total_loss<double>({1.0, 2.0, 3.0}, theta_off) ==
        total_loss<double>({1.0, 2.0, 999.0}, theta_off));

  LossWeights both_off{0.0, 0.0};
  CHECK(total_loss<double>({0.7, 5.0, 9.0}, both_off) == doctest::Approx(0.7));

  CHECK(total_loss<double>({1.0, 2.0, 3.0}, w) <= total_loss<double>({1.0, 2.0, 3.0}, {0.06, 0.02}));
  CHECK_THROWS_AS(total_loss<double>({std::nan(""), 0.0, 0.0}, w), NumericalError);
  CHECK_THROWS_AS(
      total_loss<double>({0.0, std::numeric_limits<double>::infinity(), 0.0}, w),
      NumericalError);
}

TEST_CASE("classification loss against a uniform classifier") {
  auto m = zeroed_classifier<double>(8);
  Rng rng(2);
  std::vector<Cloud<double>> batch{random_cloud<double>(rng, 16), random_cloud<double>(rng, 16)};
  std::vector<int> targets{3, 5};
  CHECK(loss_cls(m, batch, targets) == doctest::Approx(std::log(8.0)));
}

TEST_CASE("classification loss vanishes for a confident classifier") {
  auto m = zeroed_classifier<double>(4);
  // Push the head bias of class 2 far up: probability of 2 approaches 1.
  auto params = m.params();
  for (auto& s : params)
    if (s.name == "h2.b") s.p[2] = 60.0;
  Rng rng(3);
  std::vector<Cloud<double>> batch{random_cloud<double>(rng, 12)};
  std::vector<int> targets{2};
  CHECK(loss_cls(m, batch, targets) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("classification loss batch is the mean of singles") {
  Rng rng(4);
  models::Classifier<double> m;
  m.init(rng, 5);
  auto a = random_cloud<double>(rng, 14);
  auto b = random_cloud<double>(rng, 14);
  const double la = loss_cls(m, {a}, {1});
  const double lb = loss_cls(m, {b}, {4});
  const double lab = loss_cls(m, {a, b}, {1, 4});
  CHECK(lab == doctest::Approx(0.5 * (la + lb)));
}

TEST_CASE("reconstruction loss composition") {
  Rng rng(5);
  const auto x = random_cloud<double>(rng, 10);

  SUBCASE("identical intermediates give zero") {
    CHECK(loss_rec<double>(x, {&x, &x}) == doctest::Approx(0.0));
  }

  SUBCASE("single intermediate equals chamfer") {
    const auto y = random_cloud<double>(rng, 10);
    CHECK(loss_rec<double>(x, {&y}) == doctest::Approx(geo::chamfer_distance<double>(x, y)));
  }

  SUBCASE("two known pairs add up") {
    Cloud<double> a(2, 3), b(1, 3), c(2, 3);
    a.at(1, 0) = 1.0;               // {(0,0,0),(1,0,0)}
    c = a;
    c.at(0, 2) = 2.0;               // shift one point up by 2
    const double d1 = geo::chamfer_distance<double>(a, b);  // 1.0 by hand
    const double d2 = geo::chamfer_distance<double>(a, c);
    CHECK(d1 == doctest::Approx(1.0));
    CHECK(loss_rec<double>(a, {&b, &c}) == doctest::Approx(d1 + d2));
  }
}

TEST_CASE("denoising loss on symmetric and degenerate cases") {
  SUBCASE("cubic lattice with equal spacing scores the spacing") {
    const double s = 0.5;
    Cloud<double> lattice(27, 3);
    int r = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          lattice.at(r, 0) = i * s;
          lattice.at(r, 1) = j * s;
          lattice.at(r, 2) = k * s;
          ++r;
        }
    for (int m : {5, 15, 27}) {
      geo::OutlierParams p{3, m};
      CHECK(loss_den<double>({lattice}, p) == doctest::Approx(s));
    }
  }

  SUBCASE("m equal to N degenerates to the mean neighbor distance") {
    Rng rng(6);
    const auto x = random_cloud<double>(rng, 12);
    geo::OutlierParams p{3, 12};
    double mean = 0;
    for (int i = 0; i < 12; ++i) mean += geo::avg_knn_distance(x, i, 3);
    CHECK(loss_den<double>({x}, p) == doctest::Approx(mean / 12));
  }

  SUBCASE("gradient steps pull a lone outlier inward") {
    Rng rng(7);
    Cloud<double> x(17, 3);
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 3; ++j) x.at(i, j) = rng.uniform() * 0.4 - 0.2;
    x.at(16, 0) = 5.0;
    geo::OutlierParams p{3, 4};
    double prev = loss_den<double>({x}, p);
    for (int step = 0; step < 3; ++step) {
      std::vector<Cloud<double>> g{Cloud<double>(17, 3)};
      loss_den<double>({x}, p, &g);
      for (size_t i = 0; i < x.v.size(); ++i) x.v[i] -= 0.5 * g[0].v[i];
      const double cur = loss_den<double>({x}, p);
      CHECK(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("loss gradients match finite differences") {
  const double h = 1e-5;
  Rng rng(8);

  SUBCASE("classification loss input gradient") {
    models::Classifier<double> m;
    m.init(rng, 4);
    auto x = random_cloud<double>(rng, 12);
    std::vector<Cloud<double>> dx{Cloud<double>(12, 3)};
    loss_cls(m, {x}, {2}, &dx);
    Rng pick(81);
    for (int r = 0; r < 20; ++r) {
      const int i = (int)pick.uniform_index(12), j = (int)pick.uniform_index(3);
      const double save = x.at(i, j);
      x.at(i, j) = save + h;
      const double up = loss_cls(m, {x}, {2});
      x.at(i, j) = save - h;
      const double dn = loss_cls(m, {x}, {2});
      x.at(i, j) = save;
      const double fd = (up - dn) / (2 * h);
      CHECK(std::fabs(fd - dx[0].at(i, j)) <= 1e-3 * (1.0 + std::fabs(fd)));
    }
  }

  SUBCASE("reconstruction loss intermediate gradient") {
    const auto x = random_cloud<double>(rng, 11);
    auto y0 = random_cloud<double>(rng, 11);
    auto y1 = random_cloud<double>(rng, 11);
    std::vector<Cloud<double>> dy(2, Cloud<double>(11, 3));
    loss_rec<double>(x, {&y0, &y1}, &dy, 1.0);
    Rng pick(82);
    for (int r = 0; r < 20; ++r) {
      const int which = (int)pick.uniform_index(2);
      auto& y = which == 0 ? y0 : y1;
      const int i = (int)pick.uniform_index(11), j = (int)pick.uniform_index(3);
      const double save = y.at(i, j);
      y.at(i, j) = save + h;
      const double up = loss_rec<double>(x, {&y0, &y1});
      y.at(i, j) = save - h;
      const double dn = loss_rec<double>(x, {&y0, &y1});
      y.at(i, j) = save;
      const double fd = (up - dn) / (2 * h);
      CHECK(std::fabs(fd - dy[which].at(i, j)) <= 1e-3 * (1.0 + std::fabs(fd)));
    }
  }

  SUBCASE("denoising loss cloud gradient") {
    auto x = random_cloud<double>(rng, 15);
    geo::OutlierParams p{3, 5};
    std::vector<Cloud<double>> dx{Cloud<double>(15, 3)};
    loss_den<double>({x}, p, &dx);
    Rng pick(83);
    for (int r = 0; r < 20; ++r) {
      const int i = (int)pick.uniform_index(15), j = (int)pick.uniform_index(3);
      const double save = x.at(i, j);
      x.at(i, j) = save + h;
      const double up = loss_den<double>({x}, p);
      x.at(i, j) = save - h;
      const double dn = loss_den<double>({x}, p);
      x.at(i, j) = save;
      const double fd = (up - dn) / (2 * h);
      CHECK(std::fabs(fd - dx[0].at(i, j)) <= 1e-3 * (1.0 + std::fabs(fd)));
    }
  }
}

TEST_CASE("generator training is deterministic and freezes the classifier") {
  const auto data = tiny_dataset(6, 91);
  models::TrainConfig ccfg;
  ccfg.epochs = 30;
  ccfg.batch_size = 8;
  ccfg.lr = 0.05;
  ccfg.seed = 5;
  const auto clean = models::train_classifier(data, ccfg);

  MorphTrainConfig mcfg;
  mcfg.epochs = 2;
  mcfg.batch_size = 4;
  mcfg.seed = 17;
  mcfg.n_blocks = 2;

  // snapshot classifier bits
  auto& clean_model = const_cast<models::ClassifierF&>(clean.model);
  std::vector<float> before;
  for (auto& s : clean_model.params()) before.insert(before.end(), s.p, s.p + s.n);

  auto r1 = train_morphnet(clean.model, data, mcfg);
  CHECK((int)r1.history.size() == 2);
  for (const auto& e : r1.history) {
    CHECK(std::isfinite(e.cls));
    CHECK(std::isfinite(e.rec));
    CHECK(std::isfinite(e.den));
    CHECK(e.rec >= 0);
    CHECK(e.den >= 0);
    CHECK(e.cls >= 0);
  }

  std::vector<float> after;
  for (auto& s : clean_model.params()) after.insert(after.end(), s.p, s.p + s.n);
  CHECK(before == after);

  auto r2 = train_morphnet(clean.model, data, mcfg);
  nn::ParamList<float> p1, p2;
  r1.net.params(p1);
  r2.net.params(p2);
  REQUIRE(p1.size() == p2.size());
  bool identical = true;
  for (size_t s = 0; s < p1.size(); ++s)
    for (size_t i = 0; i < p1[s].n; ++i) identical &= p1[s].p[i] == p2[s].p[i];
  CHECK(identical);

  SUBCASE("all-targets policy covers every class per sample") {
    MorphTrainConfig acfg = mcfg;
    acfg.epochs = 1;
    acfg.target_policy = "all";
    const auto ra = train_morphnet(clean.model, data, acfg);
    CHECK((int)ra.history.size() == 1);
    CHECK(std::isfinite(ra.history[0].total));
  }

  SUBCASE("history serializes as csv") {
    const auto csv = history_csv(r1.history);
    CHECK(csv.rfind("epoch,cls,rec,den,total,wall_seconds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.find("\n0,") != std::string::npos);
    CHECK(csv.find("\n1,") != std::string::npos);
  }
}

TEST_CASE("a huge reconstruction weight pins the generator to the input") {
  const auto data = tiny_dataset(6, 92);
  models::TrainConfig ccfg;
  ccfg.epochs = 30;
  ccfg.batch_size = 8;
  ccfg.lr = 0.05;
  ccfg.seed = 6;
  const auto clean = models::train_classifier(data, ccfg);

  auto mean_chamfer = [&](const morphnet::MorphNetF& net) {
    morphnet::MorphNetWork<float> w;
    double acc = 0;
    int cnt = 0;
    for (const auto& rec : data.records) {
      for (int t = 0; t < data.num_classes; ++t) {
        const auto& y = morphnet_forward(net, rec.cloud, t, w);
        acc += geo::chamfer_distance<float>(rec.cloud, y);
        ++cnt;
      }
    }
    return acc / cnt;
  };

  MorphTrainConfig big, small;
  big.epochs = small.epochs = 6;
  big.batch_size = small.batch_size = 4;
  big.seed = small.seed = 23;
  big.weights.lambda = 1000.0;
  small.weights.lambda = 0.02;
  const auto rb = train_morphnet(clean.model, data, big);
  const auto rs = train_morphnet(clean.model, data, small);
  CHECK(mean_chamfer(rb.net) < mean_chamfer(rs.net));
}
