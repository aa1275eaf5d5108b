#include "morph/dataset.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <filesystem>

#include "morph/fsio.hpp"
#include "morph/geometry.hpp"
#include "morph/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "dataset binary format assumes a little-endian host");

using nlohmann::json;

namespace morph {

void LabeledDataset::validate() const {
  require(!records.empty(), "dataset: no records");
  require(num_classes >= 2, "dataset: need at least two classes");
  for (const Record& r : records) {
    require(r.cloud.rows == points_per_cloud && r.cloud.cols == 3,
            "dataset: inconsistent cloud shape");
    require(r.label >= 0 && r.label < num_classes, "dataset: label out of range");
    require(all_finite(r.cloud.data(), r.cloud.size()), "dataset: non-finite coordinate");
    if (r.poisoned)
      require(r.condition_class >= 0 && r.condition_class < num_classes,
              "dataset: poisoned record without condition class");
    else
      require(r.condition_class == -1, "dataset: clean record carries a condition class");
  }
}

const std::vector<std::string>& known_families() {
  static const std::vector<std::string> names = {"sphere", "cube",  "cylinder", "cone",
                                                 "torus",  "disc",  "pyramid",  "helix"};
  return names;
}

namespace {

using Vec3 = std::array<double, 3>;

// Antithetic pairs keep the sample centroid at the origin, so a noise-free
// sphere cloud stays exactly spherical after normalization.
void sample_sphere(Rng& rng, int n, std::vector<Vec3>& out) {
  for (int i = 0; i < n; i += 2) {
    Vec3 d;
    double norm = 0.0;
    do {
      d = {rng.gaussian(), rng.gaussian(), rng.gaussian()};
      norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    } while (norm < 1e-9);
    for (auto& c : d) c /= norm;
    out.push_back(d);
    if (i + 1 < n) out.push_back({-d[0], -d[1], -d[2]});
  }
}

void sample_cube(Rng& rng, int n, std::vector<Vec3>& out) {
  for (int i = 0; i < n; ++i) {
    const int face = (int)rng.uniform_index(6);
    const double u = rng.uniform(-1.0, 1.0);
    const double v = rng.uniform(-1.0, 1.0);
    const double s = (face & 1) ? 1.0 : -1.0;
    switch (face / 2) {
      case 0: out.push_back({s, u, v}); break;
      case 1: out.push_back({u, s, v}); break;
      default: out.push_back({u, v, s}); break;
    }
  }
}

void sample_cylinder(Rng& rng, int n, std::vector<Vec3>& out) {
  const double r = 0.6, h = 1.6;
  const double lateral = 2.0 * M_PI * r * h;
  const double caps = 2.0 * M_PI * r * r;
  for (int i = 0; i < n; ++i) {
    const double a = rng.uniform(0.0, 2.0 * M_PI);
    if (rng.uniform() < lateral / (lateral + caps)) {
      out.push_back({r * std::cos(a), r * std::sin(a), rng.uniform(-h / 2, h / 2)});
    } else {
      const double rr = r * std::sqrt(rng.uniform());
      const double z = rng.uniform() < 0.5 ? -h / 2 : h / 2;
      out.push_back({rr * std::cos(a), rr * std::sin(a), z});
    }
  }
}

void sample_cone(Rng& rng, int n, std::vector<Vec3>& out) {
  const double r = 0.8, apex_z = 0.9, base_z = -0.7;
  const double h = apex_z - base_z;
  const double lateral = M_PI * r * std::sqrt(r * r + h * h);
  const double base = M_PI * r * r;
  for (int i = 0; i < n; ++i) {
    const double a = rng.uniform(0.0, 2.0 * M_PI);
    if (rng.uniform() < lateral / (lateral + base)) {
      const double f = std::sqrt(rng.uniform());  // area-uniform along the slant
      out.push_back({f * r * std::cos(a), f * r * std::sin(a), apex_z - f * h});
    } else {
      const double rr = r * std::sqrt(rng.uniform());
      out.push_back({rr * std::cos(a), rr * std::sin(a), base_z});
    }
  }
}

void sample_torus(Rng& rng, int n, std::vector<Vec3>& out) {
  const double R = 0.65, r = 0.25;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(0.0, 2.0 * M_PI);
    double v;
    // Rejection keeps the sampling area-uniform over the outer/inner sides.
    do {
      v = rng.uniform(0.0, 2.0 * M_PI);
    } while (rng.uniform() * (R + r) > R + r * std::cos(v));
    const double w = R + r * std::cos(v);
    out.push_back({w * std::cos(u), w * std::sin(u), r * std::sin(v)});
  }
}

void sample_disc(Rng& rng, int n, std::vector<Vec3>& out) {
  for (int i = 0; i < n; ++i) {
    const double a = rng.uniform(0.0, 2.0 * M_PI);
    const double rr = std::sqrt(rng.uniform());
    out.push_back({rr * std::cos(a), rr * std::sin(a), 0.0});
  }
}

double tri_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Vec3 v = {c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Vec3 x = {u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2],
                  u[0] * v[1] - u[1] * v[0]};
  return 0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
}

Vec3 tri_sample(Rng& rng, const Vec3& a, const Vec3& b, const Vec3& c) {
  double u = rng.uniform(), v = rng.uniform();
  if (u + v > 1.0) {
    u = 1.0 - u;
    v = 1.0 - v;
  }
  return {a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
          a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
          a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2])};
}

void sample_pyramid(Rng& rng, int n, std::vector<Vec3>& out) {
  const double s = 0.8, base_z = -0.6;
  const Vec3 apex = {0.0, 0.0, 1.0};
  const Vec3 b0 = {-s, -s, base_z}, b1 = {s, -s, base_z}, b2 = {s, s, base_z},
             b3 = {-s, s, base_z};
  // Base split into two triangles plus the four lateral faces.
  const std::array<std::array<Vec3, 3>, 6> tris = {{{b0, b1, b2},
                                                    {b0, b2, b3},
                                                    {b0, b1, apex},
                                                    {b1, b2, apex},
                                                    {b2, b3, apex},
                                                    {b3, b0, apex}}};
  std::array<double, 6> cum{};
  double total = 0.0;
  for (int t = 0; t < 6; ++t) {
    total += tri_area(tris[t][0], tris[t][1], tris[t][2]);
    cum[t] = total;
  }
  for (int i = 0; i < n; ++i) {
    const double pick = rng.uniform() * total;
    int t = 0;
    while (t < 5 && pick > cum[t]) ++t;
    out.push_back(tri_sample(rng, tris[t][0], tris[t][1], tris[t][2]));
  }
}

void sample_helix(Rng& rng, int n, std::vector<Vec3>& out) {
  // Three turns with a thin Gaussian tube so the family is not strictly 1-D.
  const double tube = 0.04;
  for (int i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, 6.0 * M_PI);
    const double z = -0.8 + 1.6 * t / (6.0 * M_PI);
    out.push_back({0.7 * std::cos(t) + tube * rng.gaussian(),
                   0.7 * std::sin(t) + tube * rng.gaussian(),
                   z + tube * rng.gaussian()});
  }
}

void sample_family(const std::string& family, Rng& rng, int n, std::vector<Vec3>& out) {
  out.clear();
  out.reserve(n);
  if (family == "sphere")
    sample_sphere(rng, n, out);
  else if (family == "cube")
    sample_cube(rng, n, out);
  else if (family == "cylinder")
    sample_cylinder(rng, n, out);
  else if (family == "cone")
    sample_cone(rng, n, out);
  else if (family == "torus")
    sample_torus(rng, n, out);
  else if (family == "disc")
    sample_disc(rng, n, out);
  else if (family == "pyramid")
    sample_pyramid(rng, n, out);
  else if (family == "helix")
    sample_helix(rng, n, out);
  else
    throw ConfigError("unknown shape family: " + family);
  out.resize(n);
}

std::array<double, 9> random_rotation(Rng& rng) {
  // Uniform over SO(3): normalized Gaussian quaternion.
  double q[4], norm = 0.0;
  do {
    for (auto& c : q) c = rng.gaussian();
    norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  } while (norm < 1e-9);
  for (auto& c : q) c /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

uint64_t split_tag(const std::string& split) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : split) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

CloudF make_record_cloud(const std::string& family, const DataSpec& spec, uint64_t seed,
                         uint64_t split_hash, uint64_t index) {
  Rng rng = Rng::derive(seed, split_hash, index);
  std::vector<Vec3> pts;
  sample_family(family, rng, spec.n_points, pts);

  const auto R = random_rotation(rng);
  const double scale = rng.uniform(0.8, 1.0);
  Cloud<double> cloud(spec.n_points, 3);
  for (int i = 0; i < spec.n_points; ++i) {
    const Vec3& p = pts[i];
    double* q = cloud.row(i);
    for (int r = 0; r < 3; ++r)
      q[r] = scale * (R[3 * r] * p[0] + R[3 * r + 1] * p[1] + R[3 * r + 2] * p[2]);
  }
  if (spec.noise_sigma > 0.0)
    for (auto& c : cloud.v) c += spec.noise_sigma * rng.gaussian();

  cloud = geo::normalize_unit_sphere(cloud);
  CloudF out(spec.n_points, 3);
  for (size_t i = 0; i < cloud.v.size(); ++i) out.v[i] = static_cast<float>(cloud.v[i]);
  return out;
}

}  // namespace

LabeledDataset generate_synthetic_dataset(const DataSpec& spec, uint64_t seed,
                                          const std::string& split) {
  if (spec.families.size() < 2) throw ConfigError("dataset: need at least two families");
  for (const auto& f : spec.families) {
    const auto& known = known_families();
    if (std::find(known.begin(), known.end(), f) == known.end())
      throw ConfigError("unknown shape family: " + f);
  }
  if (spec.samples_per_class < 1) throw ConfigError("dataset: samples_per_class must be >= 1");
  if (spec.n_points < 4) throw ConfigError("dataset: n_points must be >= 4");
  if (spec.noise_sigma < 0.0) throw ConfigError("dataset: noise_sigma must be >= 0");

  LabeledDataset ds;
  ds.num_classes = (int)spec.families.size();
  ds.points_per_cloud = spec.n_points;
  ds.split = split;
  ds.families = spec.families;
  ds.seed = seed;
  const uint64_t sh = split_tag(split);
  ds.records.reserve((size_t)ds.num_classes * spec.samples_per_class);
  for (int c = 0; c < ds.num_classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      const uint64_t index = (uint64_t)c * spec.samples_per_class + s;
      Record r;
      r.cloud = make_record_cloud(spec.families[c], spec, seed, sh, index);
      r.label = c;
      ds.records.push_back(std::move(r));
    }
  }
  ds.validate();
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::string& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);

  std::vector<int> counts(ds.num_classes, 0);
  for (const Record& r : ds.records) counts[r.label]++;
  json meta = {
      {"format_version", 1},
      {"n_points", ds.points_per_cloud},
      {"num_classes", ds.num_classes},
      {"num_records", ds.records.size()},
      {"class_counts", counts},
      {"families", ds.families},
      {"seed", ds.seed},
      {"split", ds.split},
  };
  fsio::write_text_atomic(dir + "/meta.json", meta.dump(2) + "\n");

  std::vector<float> points;
  points.reserve(ds.records.size() * (size_t)ds.points_per_cloud * 3);
  std::vector<int32_t> labels;
  labels.reserve(ds.records.size());
  for (const Record& r : ds.records) {
    points.insert(points.end(), r.cloud.v.begin(), r.cloud.v.end());
    labels.push_back(r.label);
  }
  fsio::write_file_atomic(dir + "/points.f32", points.data(), points.size() * sizeof(float));
  fsio::write_file_atomic(dir + "/labels.i32", labels.data(), labels.size() * sizeof(int32_t));

  bool any_poisoned = false;
  for (const Record& r : ds.records) any_poisoned |= r.poisoned;
  const std::string poison_path = dir + "/poison.json";
  if (any_poisoned) {
    std::vector<size_t> idx;
    std::vector<int> cond;
    for (size_t i = 0; i < ds.records.size(); ++i) {
      if (ds.records[i].poisoned) {
        idx.push_back(i);
        cond.push_back(ds.records[i].condition_class);
      }
    }
    json poison = {{"poisoned_indices", idx}, {"condition_classes", cond}};
    fsio::write_text_atomic(poison_path, poison.dump(2) + "\n");
  } else if (fsio::file_exists(poison_path)) {
    std::filesystem::remove(poison_path);
  }
}

LabeledDataset load_dataset(const std::string& dir) {
  json meta;
  try {
    meta = json::parse(fsio::read_text(dir + "/meta.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed meta.json in " + dir + ": " + e.what());
  }

  LabeledDataset ds;
  ds.points_per_cloud = meta.at("n_points").get<int>();
  ds.num_classes = meta.at("num_classes").get<int>();
  ds.families = meta.at("families").get<std::vector<std::string>>();
  ds.seed = meta.at("seed").get<uint64_t>();
  ds.split = meta.at("split").get<std::string>();
  const size_t num_records = meta.at("num_records").get<size_t>();

  const auto points = fsio::read_file(dir + "/points.f32");
  const auto labels = fsio::read_file(dir + "/labels.i32");
  const size_t cloud_bytes = (size_t)ds.points_per_cloud * 3 * sizeof(float);
  if (points.size() != num_records * cloud_bytes)
    throw ConfigError("points.f32 size does not match meta.json in " + dir);
  if (labels.size() != num_records * sizeof(int32_t))
    throw ConfigError("labels.i32 size does not match meta.json in " + dir);

  ds.records.resize(num_records);
  const float* p = reinterpret_cast<const float*>(points.data());
  const int32_t* l = reinterpret_cast<const int32_t*>(labels.data());
  for (size_t i = 0; i < num_records; ++i) {
    Record& r = ds.records[i];
    r.cloud.resize(ds.points_per_cloud, 3);
    std::copy(p + i * (size_t)ds.points_per_cloud * 3,
              p + (i + 1) * (size_t)ds.points_per_cloud * 3, r.cloud.v.begin());
    r.label = l[i];
  }

  if (fsio::file_exists(dir + "/poison.json")) {
    json poison;
    try {
      poison = json::parse(fsio::read_text(dir + "/poison.json"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed poison.json in " + dir + ": " + e.what());
    }
    const auto idx = poison.at("poisoned_indices").get<std::vector<size_t>>();
    const auto cond = poison.at("condition_classes").get<std::vector<int>>();
    if (idx.size() != cond.size())
      throw ConfigError("poison.json index/class arrays differ in length in " + dir);
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= ds.records.size())
        throw ConfigError("poison.json index out of range in " + dir);
      ds.records[idx[i]].poisoned = true;
      ds.records[idx[i]].condition_class = cond[i];
    }
  }
  ds.validate();
  return ds;
}

}  // namespace morph
