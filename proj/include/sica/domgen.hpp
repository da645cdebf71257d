#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sica/format.hpp"
#include "sica/matrix.hpp"
#include "sica/rng.hpp"
#include "sica/svd.hpp"

namespace sica {

// One synthetic forensic subdomain: a semantic Gaussian cluster plus one
// unit "artifact" direction per faking variant. Artifact directions of
// different domains are pairwise orthogonal by construction, which makes
// cross-domain non-transfer exact.
struct DomainSpec {
  std::size_t domain_id = 0;
  std::string name;
  std::vector<double> semantic_center;
  double semantic_spread = 1.0;
  std::vector<std::vector<double>> artifact_directions;  // one unit vector per variant
  double artifact_strength = 3.0;
};

struct Sample {
  std::size_t sample_id = 0;
  std::size_t domain_id = 0;
  int variant_id = -1;  // >= 0 iff label == 1
  int label = 0;        // 0 real, 1 fake
  std::vector<double> features;
};

struct SampleSet {
  std::size_t d_feature = 0;
  std::vector<std::string> domain_names;
  std::vector<Sample> samples;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

struct SplitManifest {
  double train_fraction = 0.5;
  std::uint64_t seed = 0;
  std::map<std::size_t, std::vector<int>> train_variants;  // per domain, sorted
  std::map<std::size_t, std::vector<int>> test_variants;
  SplitCounts counts;
};

inline std::string default_domain_name(std::size_t k) {
  static const char* kCanonical[] = {"Deepfake", "AIGC", "IMDL", "Doc"};
  if (k < 4) return kCanonical[k];
  return "Domain" + std::to_string(k);
}

// K domains with pairwise-separated semantic centers and per-variant
// artifact directions drawn from disjoint coordinate blocks, all rotated by
// one shared random orthogonal matrix so nothing stays axis-aligned.
//
// Within a domain the variant directions share a common core axis
// (weight variant_correlation) plus a variant-specific residual inside the
// domain's block. Across domains the blocks are disjoint, so the artifact
// Gram matrix is exactly block-diagonal: in-domain detectors can generalize
// to unseen variants while cross-domain transfer is impossible.
inline std::vector<DomainSpec> make_domains(std::size_t k, std::size_t variants_per_domain,
                                            std::size_t d_feature, std::uint64_t seed,
                                            double spread = 1.0, double strength = 3.0,
                                            double variant_correlation = 0.7) {
  if (k < 1 || variants_per_domain < 1)
    throw std::invalid_argument("make_domains: counts must be positive");
  if (k * variants_per_domain > d_feature - k)
    throw std::invalid_argument(
        "make_domains: need k*variants <= d_feature - k for orthogonal artifact axes");
  if (!(variant_correlation >= 0.0 && variant_correlation <= 1.0))
    throw std::invalid_argument("make_domains: variant_correlation must be in [0, 1]");

  // A random orthogonal matrix; the left factor of a Gaussian matrix works
  // and reuses the tested SVD path.
  Rng rot_rng(rng::derive(seed, "domgen.rotation"));
  const Matrix q = svd(Matrix::random_normal(d_feature, d_feature, rot_rng)).u;

  auto add_rotated_axis = [&](std::vector<double>& v, std::size_t axis, double scale_by) {
    for (std::size_t i = 0; i < d_feature; ++i) v[i] += q(i, axis) * scale_by;
  };

  std::vector<DomainSpec> specs;
  const double separation = 6.0 * spread;  // pairwise distance 6*sqrt(2)*spread
  for (std::size_t d = 0; d < k; ++d) {
    DomainSpec spec;
    spec.domain_id = d;
    spec.name = default_domain_name(d);
    spec.semantic_spread = spread;
    spec.artifact_strength = strength;
    spec.semantic_center.assign(d_feature, 0.0);
    add_rotated_axis(spec.semantic_center, d, separation);

    const std::size_t block = k + d * variants_per_domain;  // this domain's axes
    const double core_w = std::sqrt(variant_correlation);
    const double res_w = std::sqrt(1.0 - variant_correlation);
    for (std::size_t v = 0; v < variants_per_domain; ++v) {
      std::vector<double> dir(d_feature, 0.0);
      if (variants_per_domain == 1) {
        add_rotated_axis(dir, block, 1.0);
      } else {
        add_rotated_axis(dir, block, core_w);
        // Variant-specific residual on the block's remaining axes.
        Rng res_rng(rng::derive(seed, "domgen.variant", d, v));
        std::vector<double> coef(variants_per_domain - 1);
        double norm = 0.0;
        for (double& c : coef) {
          c = res_rng.normal();
          norm += c * c;
        }
        norm = std::sqrt(norm);
        for (std::size_t a = 0; a + 1 < variants_per_domain; ++a)
          add_rotated_axis(dir, block + 1 + a, res_w * coef[a] / norm);
      }
      spec.artifact_directions.push_back(std::move(dir));
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

// x_real = center + spread*g;  x_fake = x_real + strength*(1 + 0.2*u)*a_{k,v}
// with g standard normal and u uniform(-1,1), one independent stream per
// sample so generation is order-free.
inline SampleSet sample_dataset(const std::vector<DomainSpec>& specs,
                                std::size_t n_real_per_domain, std::size_t n_fake_per_variant,
                                std::uint64_t seed) {
  if (specs.empty()) throw std::invalid_argument("sample_dataset: no domain specs");
  if (n_real_per_domain == 0 || n_fake_per_variant == 0)
    throw std::invalid_argument("sample_dataset: sample counts must be positive");
  const std::size_t d_feature = specs.front().semantic_center.size();

  SampleSet set;
  set.d_feature = d_feature;
  std::size_t next_id = 0;
  for (const DomainSpec& spec : specs) {
    set.domain_names.push_back(spec.name);
    for (std::size_t i = 0; i < n_real_per_domain; ++i) {
      Rng rng(rng::derive(seed, "domgen.real", spec.domain_id, i));
      Sample s;
      s.sample_id = next_id++;
      s.domain_id = spec.domain_id;
      s.label = 0;
      s.features.resize(d_feature);
      for (std::size_t f = 0; f < d_feature; ++f)
        s.features[f] = spec.semantic_center[f] + spec.semantic_spread * rng.normal();
      set.samples.push_back(std::move(s));
    }
    for (std::size_t v = 0; v < spec.artifact_directions.size(); ++v) {
      for (std::size_t i = 0; i < n_fake_per_variant; ++i) {
        Rng rng(rng::derive(seed, "domgen.fake", spec.domain_id, v, i));
        Sample s;
        s.sample_id = next_id++;
        s.domain_id = spec.domain_id;
        s.variant_id = static_cast<int>(v);
        s.label = 1;
        s.features.resize(d_feature);
        for (std::size_t f = 0; f < d_feature; ++f)
          s.features[f] = spec.semantic_center[f] + spec.semantic_spread * rng.normal();
        const double jitter = 1.0 + 0.2 * rng.uniform(-1.0, 1.0);
        const double amp = spec.artifact_strength * jitter;
        for (std::size_t f = 0; f < d_feature; ++f)
          s.features[f] += amp * spec.artifact_directions[v][f];
        set.samples.push_back(std::move(s));
      }
    }
  }
  return set;
}

struct SplitResult {
  SampleSet train, val, test;
  SplitManifest manifest;
};

// Variant-disjoint split: fakes are partitioned per domain by faking
// variant using largest-remainder apportionment against the global target,
// reals follow proportionally, and the train side is carved 9:1 into
// train/validation.
inline SplitResult split_by_variant(const SampleSet& set, double train_fraction_of_variants,
                                    std::uint64_t seed) {
  if (!(train_fraction_of_variants > 0.0 && train_fraction_of_variants < 1.0))
    throw std::invalid_argument("split_by_variant: fraction must be in (0, 1)");

  // Collect per-domain variant lists.
  std::map<std::size_t, std::vector<int>> variants;
  for (const Sample& s : set.samples)
    if (s.label == 1) {
      auto& v = variants[s.domain_id];
      if (std::find(v.begin(), v.end(), s.variant_id) == v.end()) v.push_back(s.variant_id);
    }
  if (variants.empty()) throw std::invalid_argument("split_by_variant: no fake samples");
  std::size_t total_variants = 0;
  for (auto& [dom, v] : variants) {
    if (v.size() < 2)
      throw std::invalid_argument("split_by_variant: every domain needs >= 2 variants");
    std::sort(v.begin(), v.end());
    total_variants += v.size();
  }
  const std::size_t n_domains = variants.size();

  // Target train-variant count, then per-domain quotas by largest remainder,
  // each domain keeping at least one variant on each side.
  long long target = std::llround(train_fraction_of_variants * static_cast<double>(total_variants));
  target = std::clamp<long long>(target, static_cast<long long>(n_domains),
                                 static_cast<long long>(total_variants - n_domains));
  std::map<std::size_t, long long> quota;
  std::map<std::size_t, double> remainder;
  long long assigned = 0;
  for (const auto& [dom, v] : variants) {
    const double ideal = train_fraction_of_variants * static_cast<double>(v.size());
    long long q = static_cast<long long>(std::floor(ideal));
    q = std::clamp<long long>(q, 1, static_cast<long long>(v.size()) - 1);
    quota[dom] = q;
    remainder[dom] = ideal - static_cast<double>(q);
    assigned += q;
  }
  while (assigned != target) {
    const bool grow = assigned < target;
    std::size_t pick = 0;
    double best = grow ? -1.0 : 2.0;
    bool found = false;
    for (const auto& [dom, v] : variants) {
      const long long limit = static_cast<long long>(v.size()) - 1;
      if (grow && quota[dom] >= limit) continue;
      if (!grow && quota[dom] <= 1) continue;
      if ((grow && remainder[dom] > best) || (!grow && remainder[dom] < best)) {
        best = remainder[dom];
        pick = dom;
        found = true;
      }
    }
    if (!found) break;  // bounds make the target unreachable; keep closest
    quota[pick] += grow ? 1 : -1;
    remainder[pick] += grow ? -1.0 : 1.0;
    assigned += grow ? 1 : -1;
  }

  SplitManifest manifest;
  manifest.train_fraction = train_fraction_of_variants;
  manifest.seed = seed;
  for (const auto& [dom, v] : variants) {
    std::vector<int> shuffled = v;
    Rng rng(rng::derive(seed, "split.variants", dom));
    rng.shuffle(shuffled);
    std::vector<int> train_v(shuffled.begin(), shuffled.begin() + quota[dom]);
    std::vector<int> test_v(shuffled.begin() + quota[dom], shuffled.end());
    std::sort(train_v.begin(), train_v.end());
    std::sort(test_v.begin(), test_v.end());
    manifest.train_variants[dom] = train_v;
    manifest.test_variants[dom] = test_v;
  }

  enum class Part { Train, Val, Test };
  std::map<std::size_t, Part> assign;  // sample_id -> partition

  for (const auto& [dom, v] : variants) {
    const auto& train_v = manifest.train_variants[dom];
    auto in_train_variants = [&](int variant) {
      return std::binary_search(train_v.begin(), train_v.end(), variant);
    };

    // Reals: the test side takes the same share as the variant split, the
    // rest is carved 9:1 into train/val.
    std::vector<std::size_t> real_ids, fake_train_side_ids;
    for (const Sample& s : set.samples) {
      if (s.domain_id != dom) continue;
      if (s.label == 0) {
        real_ids.push_back(s.sample_id);
      } else if (in_train_variants(s.variant_id)) {
        fake_train_side_ids.push_back(s.sample_id);
      } else {
        assign[s.sample_id] = Part::Test;
      }
    }
    {
      Rng rng(rng::derive(seed, "split.reals", dom));
      rng.shuffle(real_ids);
      const double test_share =
          static_cast<double>(v.size() - static_cast<std::size_t>(quota[dom])) /
          static_cast<double>(v.size());
      const std::size_t n_test =
          static_cast<std::size_t>(std::llround(test_share * static_cast<double>(real_ids.size())));
      const std::size_t n_train_side = real_ids.size() - n_test;
      const std::size_t n_val =
          static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n_train_side)));
      for (std::size_t i = 0; i < real_ids.size(); ++i) {
        if (i < n_test)
          assign[real_ids[i]] = Part::Test;
        else if (i < n_test + n_val)
          assign[real_ids[i]] = Part::Val;
        else
          assign[real_ids[i]] = Part::Train;
      }
    }
    {
      Rng rng(rng::derive(seed, "split.fakes", dom));
      rng.shuffle(fake_train_side_ids);
      const std::size_t n_val = static_cast<std::size_t>(
          std::llround(0.1 * static_cast<double>(fake_train_side_ids.size())));
      for (std::size_t i = 0; i < fake_train_side_ids.size(); ++i)
        assign[fake_train_side_ids[i]] = (i < n_val) ? Part::Val : Part::Train;
    }
  }

  SplitResult out;
  for (SampleSet* part : {&out.train, &out.val, &out.test}) {
    part->d_feature = set.d_feature;
    part->domain_names = set.domain_names;
  }
  for (const Sample& s : set.samples) {
    auto it = assign.find(s.sample_id);
    if (it == assign.end()) continue;  // reals of a domain without fakes
    switch (it->second) {
      case Part::Train: out.train.samples.push_back(s); break;
      case Part::Val: out.val.samples.push_back(s); break;
      case Part::Test: out.test.samples.push_back(s); break;
    }
  }
  if (out.train.samples.empty() || out.test.samples.empty())
    throw std::invalid_argument("split_by_variant: fraction yields an empty side");
  manifest.counts = {out.train.samples.size(), out.val.samples.size(), out.test.samples.size()};
  out.manifest = manifest;
  return out;
}

// ---- dataset directory format -------------------------------------------

inline void write_data_csv(const SampleSet& set, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::invalid_argument("write_data_csv: cannot open " + path.string());
  f << "sample_id,domain,variant,label";
  for (std::size_t i = 0; i < set.d_feature; ++i) f << ",f" << i;
  f << "\n";
  for (const Sample& s : set.samples) {
    f << s.sample_id << ',' << s.domain_id << ',';
    if (s.label == 1) f << s.variant_id;
    f << ',' << s.label;
    for (double x : s.features) f << ',' << fmt::full(x);
    f << "\n";
  }
}

inline SampleSet read_data_csv(const std::filesystem::path& path,
                               std::vector<std::string> domain_names = {}) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("read_data_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw std::invalid_argument("read_data_csv: empty file");
  std::size_t d_feature = 0;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      if (!field.empty() && field[0] == 'f' && field != "f") ++d_feature;
    }
  }
  if (d_feature == 0) throw std::invalid_argument("read_data_csv: no feature columns");
  SampleSet set;
  set.d_feature = d_feature;
  std::size_t max_domain = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    Sample s;
    std::getline(ss, field, ',');
    s.sample_id = std::stoull(field);
    std::getline(ss, field, ',');
    s.domain_id = std::stoull(field);
    std::getline(ss, field, ',');
    s.variant_id = field.empty() ? -1 : std::stoi(field);
    std::getline(ss, field, ',');
    s.label = std::stoi(field);
    if (s.label != 0 && s.label != 1)
      throw std::invalid_argument("read_data_csv: label must be 0/1");
    if ((s.label == 1) != (s.variant_id >= 0))
      throw std::invalid_argument("read_data_csv: variant must be present iff fake");
    s.features.reserve(d_feature);
    while (std::getline(ss, field, ',')) {
      const double x = std::strtod(field.c_str(), nullptr);
      if (!std::isfinite(x)) throw std::invalid_argument("read_data_csv: non-finite feature");
      s.features.push_back(x);
    }
    if (s.features.size() != d_feature)
      throw std::invalid_argument("read_data_csv: wrong feature count on a row");
    max_domain = std::max(max_domain, s.domain_id);
    set.samples.push_back(std::move(s));
  }
  if (!domain_names.empty()) {
    set.domain_names = std::move(domain_names);
  } else {
    for (std::size_t d = 0; d <= max_domain; ++d)
      set.domain_names.push_back(default_domain_name(d));
  }
  return set;
}

struct DatasetConfig {
  std::size_t domains = 4;
  std::size_t variants = 8;
  std::size_t d_feature = 64;
  std::size_t n_real_per_domain = 500;
  std::size_t n_fake_per_variant = 250;
  double spread = 1.0;
  double strength = 3.0;
  double variant_correlation = 0.8;
  double split_fraction = 0.5;
  std::uint64_t seed = 7;
};

inline nlohmann::json dataset_manifest_json(const DatasetConfig& cfg,
                                            const std::vector<DomainSpec>& specs,
                                            const SplitManifest& split) {
  nlohmann::json domains = nlohmann::json::array();
  for (const DomainSpec& s : specs) {
    domains.push_back({{"id", s.domain_id},
                       {"name", s.name},
                       {"semantic_center", s.semantic_center},
                       {"semantic_spread", s.semantic_spread},
                       {"artifact_strength", s.artifact_strength},
                       {"artifact_directions", s.artifact_directions}});
  }
  nlohmann::json train_v = nlohmann::json::object(), test_v = nlohmann::json::object();
  for (const auto& [dom, v] : split.train_variants) train_v[std::to_string(dom)] = v;
  for (const auto& [dom, v] : split.test_variants) test_v[std::to_string(dom)] = v;
  return {{"config",
           {{"domains", cfg.domains},
            {"variants", cfg.variants},
            {"d_feature", cfg.d_feature},
            {"n_real_per_domain", cfg.n_real_per_domain},
            {"n_fake_per_variant", cfg.n_fake_per_variant},
            {"spread", cfg.spread},
            {"strength", cfg.strength},
            {"variant_correlation", cfg.variant_correlation},
            {"split_fraction", cfg.split_fraction},
            {"seed", cfg.seed}}},
          {"split",
           {{"fraction", split.train_fraction},
            {"seed", split.seed},
            {"train_variants", train_v},
            {"test_variants", test_v},
            {"counts",
             {{"train", split.counts.train},
              {"val", split.counts.val},
              {"test", split.counts.test}}}}},
          {"domains", domains}};
}

struct Dataset {
  DatasetConfig config;
  std::vector<DomainSpec> specs;
  SampleSet all;
  SplitResult split;
};

inline Dataset generate_dataset(const DatasetConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  ds.specs = make_domains(cfg.domains, cfg.variants, cfg.d_feature,
                          rng::derive(cfg.seed, "domgen.specs"), cfg.spread, cfg.strength,
                          cfg.variant_correlation);
  ds.all = sample_dataset(ds.specs, cfg.n_real_per_domain, cfg.n_fake_per_variant,
                          rng::derive(cfg.seed, "domgen.samples"));
  ds.split = split_by_variant(ds.all, cfg.split_fraction, rng::derive(cfg.seed, "domgen.split"));
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_data_csv(ds.all, dir / "data.csv");
  std::ofstream f(dir / "manifest.json", std::ios::trunc);
  if (!f) throw std::invalid_argument("save_dataset: cannot open manifest");
  f << dataset_manifest_json(ds.config, ds.specs, ds.split.manifest).dump(2) << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw std::invalid_argument("load_dataset: missing manifest.json in " + dir.string());
  const nlohmann::json j = nlohmann::json::parse(f);
  Dataset ds;
  const auto& c = j.at("config");
  ds.config.domains = c.at("domains").get<std::size_t>();
  ds.config.variants = c.at("variants").get<std::size_t>();
  ds.config.d_feature = c.at("d_feature").get<std::size_t>();
  ds.config.n_real_per_domain = c.at("n_real_per_domain").get<std::size_t>();
  ds.config.n_fake_per_variant = c.at("n_fake_per_variant").get<std::size_t>();
  ds.config.spread = c.at("spread").get<double>();
  ds.config.strength = c.at("strength").get<double>();
  ds.config.variant_correlation = c.at("variant_correlation").get<double>();
  ds.config.split_fraction = c.at("split_fraction").get<double>();
  ds.config.seed = c.at("seed").get<std::uint64_t>();

  std::vector<std::string> names;
  for (const auto& d : j.at("domains")) {
    DomainSpec spec;
    spec.domain_id = d.at("id").get<std::size_t>();
    spec.name = d.at("name").get<std::string>();
    spec.semantic_center = d.at("semantic_center").get<std::vector<double>>();
    spec.semantic_spread = d.at("semantic_spread").get<double>();
    spec.artifact_strength = d.at("artifact_strength").get<double>();
    spec.artifact_directions =
        d.at("artifact_directions").get<std::vector<std::vector<double>>>();
    names.push_back(spec.name);
    ds.specs.push_back(std::move(spec));
  }
  ds.all = read_data_csv(dir / "data.csv", names);
  ds.split = split_by_variant(ds.all, ds.config.split_fraction,
                              rng::derive(ds.config.seed, "domgen.split"));
  const auto& counts = j.at("split").at("counts");
  if (ds.split.manifest.counts.train != counts.at("train").get<std::size_t>() ||
      ds.split.manifest.counts.val != counts.at("val").get<std::size_t>() ||
      ds.split.manifest.counts.test != counts.at("test").get<std::size_t>())
    throw std::invalid_argument("load_dataset: replayed split disagrees with manifest counts");
  return ds;
}

// Per-domain subsets keep the global feature layout and names.
inline SampleSet filter_domain(const SampleSet& set, std::size_t domain_id, bool keep) {
  SampleSet out;
  out.d_feature = set.d_feature;
  out.domain_names = set.domain_names;
  for (const Sample& s : set.samples)
    if ((s.domain_id == domain_id) == keep) out.samples.push_back(s);
  return out;
}

}  // namespace sica
