#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "fedret/contrastive.hpp"
#include "fedret/rng.hpp"

using namespace fedret;

namespace {

// Single linear layer f->f with identity weights: descriptors equal features.
EmbedderSpec identity_spec(int f) {
  EmbedderSpec s;
  s.input_dim = f;
  s.hidden_dims = {};
  s.output_dim = f;
  s.l2_normalize_output = false;
  return s;
}

ParamVector identity_params(int f) {
  EmbedderSpec s = identity_spec(f);
  ParamVector p;
  p.layout = make_layout(s);
  p.values.assign(s.param_count(), 0.0);
  for (int i = 0; i < f; ++i) p.values[static_cast<std::size_t>(i) * f + i] = 1.0;
  return p;
}

GeoSample mk(std::uint64_t id, double lat, double lon, std::vector<double> feat,
             std::uint64_t seq = 0, Role role = Role::Database) {
  GeoSample s;
  s.id = id;
  s.tag = {lat, lon};
  s.feat = std::move(feat);
  s.seq_id = seq;
  s.role = role;
  return s;
}

double meters_north(double m) { return m / kEarthRadiusM * 180.0 / M_PI; }

// Exhaustive (distance, id) sort, written against euclidean distances on raw
// descriptor outputs, independent of the mining implementation.
std::vector<std::uint64_t> brute_force_ranking(const ParamVector& p, const EmbedderSpec& spec,
                                               const GeoSample& q,
                                               const std::vector<GeoSample>& pool) {
  Matrix xq(1, q.feat.size());
  std::copy(q.feat.begin(), q.feat.end(), xq.row(0).begin());
  DescriptorBatch dq = forward(p, spec, xq);
  std::vector<std::pair<double, std::uint64_t>> scored;
  for (const GeoSample& s : pool) {
    Matrix xs(1, s.feat.size());
    std::copy(s.feat.begin(), s.feat.end(), xs.row(0).begin());
    DescriptorBatch ds = forward(p, spec, xs);
    double acc = 0.0;
    for (std::size_t c = 0; c < dq.dim; ++c) {
      double d = dq.descriptors.at(0, c) - ds.descriptors.at(0, c);
      acc += d * d;
    }
    scored.emplace_back(std::sqrt(acc), s.id);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::uint64_t> ids;
  for (auto& [d, id] : scored) ids.push_back(id);
  return ids;
}

}  // namespace

TEST_CASE("mine_positive basics") {
  EmbedderSpec spec = identity_spec(2);
  ParamVector p = identity_params(2);
  GeoSample q = mk(0, 0, 0, {0.0, 0.0});

  SUBCASE("single candidate") {
    std::vector<GeoSample> pool = {mk(7, 0, 0, {5.0, 5.0})};
    CHECK(mine_positive(p, spec, q, pool) == 7);
  }
  SUBCASE("nearest feature wins under the identity embedder") {
    std::vector<GeoSample> pool = {mk(1, 0, 0, {3.0, 0.0}), mk(2, 0, 0, {1.0, 0.0}),
                                   mk(3, 0, 0, {2.0, 0.0})};
    CHECK(mine_positive(p, spec, q, pool) == 2);
  }
  SUBCASE("equidistant candidates break ties toward the lower id") {
    std::vector<GeoSample> pool = {mk(9, 0, 0, {1.0, 0.0}), mk(4, 0, 0, {-1.0, 0.0})};
    CHECK(mine_positive(p, spec, q, pool) == 4);
  }
  SUBCASE("empty candidate set throws") {
    std::vector<GeoSample> empty;
    CHECK_THROWS_AS(mine_positive(p, spec, q, empty), std::invalid_argument);
  }
}

TEST_CASE("mine_negatives basics and oracle equivalence") {
  EmbedderSpec spec = identity_spec(3);
  ParamVector p = identity_params(3);
  GeoSample q = mk(100, 0, 0, {0.0, 0.0, 0.0});

  Rng rng(5);
  std::vector<GeoSample> pool;
  for (std::uint64_t i = 0; i < 8; ++i) {
    pool.push_back(mk(i, 0, 0, {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}));
  }

  SUBCASE("n_neg = |N| returns the whole set sorted by distance") {
    std::vector<std::uint64_t> got = mine_negatives(p, spec, q, pool, 8);
    CHECK(got == brute_force_ranking(p, spec, q, pool));
  }
  SUBCASE("hand-built pool of 8 matches the exhaustive sort prefix") {
    std::vector<std::uint64_t> got = mine_negatives(p, spec, q, pool, 3);
    std::vector<std::uint64_t> want = brute_force_ranking(p, spec, q, pool);
    want.resize(3);
    CHECK(got == want);
  }
  SUBCASE("n_neg = 1 returns the unique minimum") {
    std::vector<std::uint64_t> got = mine_negatives(p, spec, q, pool, 1);
    CHECK(got.size() == 1);
    CHECK(got[0] == brute_force_ranking(p, spec, q, pool)[0]);
  }
  SUBCASE("short pool reports a shortfall and returns everything") {
    bool shortfall = false;
    std::vector<std::uint64_t> got = mine_negatives(p, spec, q, pool, 20, &shortfall);
    CHECK(shortfall);
    CHECK(got.size() == 8);
  }
  SUBCASE("monotone hardness: the k-th mined distance is non-decreasing") {
    std::vector<std::uint64_t> got = mine_negatives(p, spec, q, pool, 8);
    double prev = -1.0;
    for (std::uint64_t id : got) {
      const GeoSample& s = *std::find_if(pool.begin(), pool.end(),
                                         [&](const GeoSample& g) { return g.id == id; });
      double d = euclidean_distance(q.feat, s.feat);
      CHECK(d >= prev);
      prev = d;
    }
  }
}

TEST_CASE("mining equals brute force on random pools up to 200 samples") {
  Rng rng(77);
  EmbedderSpec spec;
  spec.input_dim = 6;
  spec.hidden_dims = {8};
  spec.output_dim = 4;
  for (int trial = 0; trial < 20; ++trial) {
    ParamVector p = init_params(spec, 900 + static_cast<std::uint64_t>(trial));
    GeoSample q = mk(100000, 0, 0, {});
    q.feat.resize(6);
    for (double& v : q.feat) v = rng.uniform(-1, 1);

    std::size_t n = 20 + rng.below(180);
    std::vector<GeoSample> pool;
    for (std::size_t i = 0; i < n; ++i) {
      GeoSample s = mk(i, 0, 0, {});
      s.feat.resize(6);
      for (double& v : s.feat) v = rng.uniform(-1, 1);
      pool.push_back(std::move(s));
    }

    std::vector<std::uint64_t> want = brute_force_ranking(p, spec, q, pool);
    CHECK(mine_positive(p, spec, q, pool) == want[0]);
    int n_neg = 1 + static_cast<int>(rng.below(10));
    std::vector<std::uint64_t> got = mine_negatives(p, spec, q, pool, n_neg);
    std::vector<std::uint64_t> prefix(want.begin(),
                                      want.begin() + std::min<std::size_t>(n_neg, want.size()));
    CHECK(got == prefix);
  }
}

TEST_CASE("triplet_loss") {
  CHECK(triplet_loss(0.3, 0.3, 0.1) == doctest::Approx(0.1));   // equal distances -> margin
  CHECK(triplet_loss(0.3, 0.3, 0.0) == 0.0);
  CHECK(triplet_loss(0.2, 0.8, 0.1) == 0.0);                    // trivial negative
  CHECK(triplet_loss(0.5, 0.6, 0.1) == 0.0);                    // 0.25 - 0.36 + 0.1 < 0
  CHECK(triplet_loss(0.6, 0.5, 0.1) == doctest::Approx(0.21));  // 0.36 - 0.25 + 0.1
}

TEST_CASE("apply_augmentation") {
  std::vector<double> x = {1.0, -2.0, 3.0, 0.5};

  SUBCASE("mode None leaves features untouched") {
    AugmentSpec spec;
    CHECK(apply_augmentation(x, spec, 1, 2) == x);
  }
  SUBCASE("zero jitter and full crop are identity in every mode") {
    for (AugmentMode mode : {AugmentMode::Uniform, AugmentMode::ClientSpecific}) {
      AugmentSpec spec;
      spec.mode = mode;
      spec.jitter_scale = 0.0;
      spec.crop_fraction = 1.0;
      CHECK(apply_augmentation(x, spec, 3, 4) == x);
    }
  }
  SUBCASE("client-specific jitter is identical for every sample of a client") {
    AugmentSpec spec;
    spec.mode = AugmentMode::ClientSpecific;
    spec.jitter_scale = 0.4;
    std::vector<double> a = apply_augmentation(x, spec, 10, 111);
    std::vector<double> b = apply_augmentation(x, spec, 10, 222);
    CHECK(a == b);
    std::vector<double> other_client = apply_augmentation(x, spec, 11, 111);
    CHECK(a != other_client);
  }
  SUBCASE("uniform jitter varies per sample seed and is reproducible") {
    AugmentSpec spec;
    spec.mode = AugmentMode::Uniform;
    spec.jitter_scale = 0.4;
    bool changed = false;
    for (std::uint64_t s = 0; s < 16; ++s) {
      std::vector<double> a = apply_augmentation(x, spec, 1, s);
      CHECK(a == apply_augmentation(x, spec, 1, s));
      if (a != x) changed = true;
    }
    CHECK(changed);  // the 0.5 gate cannot suppress all 16 seeds
  }
  SUBCASE("crop zeroes a contiguous block") {
    AugmentSpec spec;
    spec.mode = AugmentMode::Uniform;
    spec.jitter_scale = 0.0;
    spec.crop_fraction = 0.5;
    std::vector<double> big(16, 1.0);
    bool saw_crop = false;
    for (std::uint64_t s = 0; s < 32 && !saw_crop; ++s) {
      std::vector<double> a = apply_augmentation(big, spec, 1, s);
      std::size_t zeros = 0, first = 16, last = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == 0.0) {
          zeros += 1;
          first = std::min(first, i);
          last = i;
        }
      }
      if (zeros > 0) {
        saw_crop = true;
        CHECK(zeros == 8);                 // (1 - 0.5) * 16
        CHECK(last - first + 1 == zeros);  // contiguous
      }
    }
    CHECK(saw_crop);
  }
}

TEST_CASE("restrict_mining_pool") {
  // Five sequences of three samples, strung northward 100 m apart.
  std::vector<GeoSample> db;
  std::uint64_t id = 0;
  for (std::uint64_t seq = 0; seq < 5; ++seq) {
    for (int i = 0; i < 3; ++i) {
      db.push_back(mk(id++, meters_north(100.0 * static_cast<double>(seq) + 5.0 * i), 0.0,
                      {1.0}, seq));
    }
  }
  GeoTag center{0.0, 0.0};

  SUBCASE("big enough limits return the full database") {
    std::vector<GeoSample> pool = restrict_mining_pool(db, center, 5, 3, 1);
    CHECK(pool.size() == db.size());
  }
  SUBCASE("nearest two sequences by centroid, brute-force checked") {
    std::vector<GeoSample> pool = restrict_mining_pool(db, center, 2, 3, 1);
    std::set<std::uint64_t> seqs;
    for (const GeoSample& s : pool) seqs.insert(s.seq_id);
    CHECK(seqs == std::set<std::uint64_t>{0, 1});
  }
  SUBCASE("image sampling draws the requested count per sequence, deterministically") {
    std::vector<GeoSample> pool = restrict_mining_pool(db, center, 5, 2, 1);
    CHECK(pool.size() == 10);
    std::vector<GeoSample> again = restrict_mining_pool(db, center, 5, 2, 1);
    REQUIRE(pool.size() == again.size());
    for (std::size_t i = 0; i < pool.size(); ++i) CHECK(pool[i].id == again[i].id);
  }
  SUBCASE("fewer sequences than requested takes all") {
    std::vector<GeoSample> pool = restrict_mining_pool(db, center, 50, 3, 1);
    CHECK(pool.size() == db.size());
  }
}

TEST_CASE("restrict_mining_pool handles the reference operating points") {
  // (333 sequences, 3 images) and (20 sequences, 50 images).
  std::vector<GeoSample> db;
  std::uint64_t id = 0;
  for (std::uint64_t seq = 0; seq < 400; ++seq) {
    for (int i = 0; i < 4; ++i) {
      db.push_back(mk(id++, meters_north(40.0 * static_cast<double>(seq) + 3.0 * i), 0.0,
                      {0.0}, seq));
    }
  }
  GeoTag center{0.0, 0.0};

  std::vector<GeoSample> wide = restrict_mining_pool(db, center, 333, 3, 7);
  CHECK(wide.size() == 333u * 3u);
  std::set<std::uint64_t> wide_seqs;
  for (const GeoSample& s : wide) wide_seqs.insert(s.seq_id);
  CHECK(wide_seqs.size() == 333);

  std::vector<GeoSample> narrow = restrict_mining_pool(db, center, 20, 50, 7);
  CHECK(narrow.size() == 20u * 4u);  // sequences are shorter than 50 images
  std::set<std::uint64_t> narrow_seqs;
  for (const GeoSample& s : narrow) narrow_seqs.insert(s.seq_id);
  CHECK(narrow_seqs.size() == 20);
  CHECK(*narrow_seqs.rbegin() == 19);  // the 20 nearest sequences
}

TEST_CASE("ClientDataset::build drops queries without geographic positives") {
  MiningConfig mining;  // tau = tau_neg = 25
  std::vector<GeoSample> queries = {mk(1, 0, 0, {1.0}, 10, Role::Query),
                                    mk(2, meters_north(5000), 0, {1.0}, 10, Role::Query)};
  std::vector<GeoSample> db = {mk(3, 0, 0, {1.0}, 20), mk(4, meters_north(60), 0, {1.0}, 20)};
  ClientDataset ds = ClientDataset::build(0, queries, db, mining);
  CHECK(ds.queries.size() == 1);
  CHECK(ds.queries[0].id == 1);
  CHECK(ds.dropped_queries == 1);
  REQUIRE(ds.candidates.size() == 1);
  CHECK(ds.candidates[0].positives == std::vector<std::uint64_t>{3});
  CHECK(ds.candidates[0].negatives == std::vector<std::uint64_t>{4});
}

namespace {

// Toy two-feature client: one query with one near positive and one far
// negative. Identity embedder keeps every gradient hand-computable.
ClientDataset toy_client() {
  MiningConfig mining;
  std::vector<GeoSample> queries = {mk(0, 0, 0, {1.0, 0.0}, 1, Role::Query)};
  std::vector<GeoSample> db = {mk(1, 0, 0, {0.9, 0.1}, 2),
                               mk(2, meters_north(100), 0, {0.5, 0.5}, 3)};
  return ClientDataset::build(5, queries, db, mining);
}

LocalRunConfig toy_config() {
  LocalRunConfig cfg;
  cfg.mining.n_neg = 1;
  cfg.mining.margin = 0.5;
  cfg.train.batch_triplets = 1;
  cfg.train.local_optimizer = LocalOptimizer::SGD;
  cfg.train.local_lr = 0.1;
  cfg.train.max_local_iterations = 1;
  cfg.train.seed = 42;
  return cfg;
}

}  // namespace

TEST_CASE("local_train with zero iterations returns the start parameters") {
  ClientDataset ds = toy_client();
  LocalRunConfig cfg = toy_config();
  cfg.train.max_local_iterations = 0;
  ParamVector start = identity_params(2);
  LocalTrainResult res = local_train(start, identity_spec(2), ds, cfg);
  CHECK(res.params.values == start.values);
  CHECK(res.stats.iterations == 0);
  CHECK(res.stats.samples_processed == 0);
}

TEST_CASE("local_train single SGD step matches the hand-derived update") {
  // Embeddings under the identity layer: e_q=(1,0), e_p=(0.9,0.1),
  // e_n=(0.5,0.5). d_qp^2=0.02, d_qn^2=0.5, margin 0.5 -> active hinge,
  // loss = 0.02. Upstream gradients:
  //   g_q = 2(e_q-e_p) - 2(e_q-e_n) = (-0.8, 0.8)
  //   g_p = -2(e_q-e_p)             = (-0.2, 0.2)
  //   g_n =  2(e_q-e_n)             = ( 1.0,-1.0)
  // dW[o][k] = sum_i g_i[o] x_i[k] with x_q=(1,0), x_p=(0.9,0.1),
  // x_n=(0.5,0.5); db[o] = sum_i g_i[o] = 0. One SGD step, lr 0.1.
  ClientDataset ds = toy_client();
  LocalRunConfig cfg = toy_config();
  ParamVector start = identity_params(2);
  LocalTrainResult res = local_train(start, identity_spec(2), ds, cfg);

  const double dw00 = (-0.8) * 1.0 + (-0.2) * 0.9 + 1.0 * 0.5;
  const double dw01 = (-0.8) * 0.0 + (-0.2) * 0.1 + 1.0 * 0.5;
  const double dw10 = 0.8 * 1.0 + 0.2 * 0.9 + (-1.0) * 0.5;
  const double dw11 = 0.8 * 0.0 + 0.2 * 0.1 + (-1.0) * 0.5;

  CHECK(res.stats.iterations == 1);
  CHECK(res.stats.samples_processed == 1);
  CHECK(res.stats.mean_loss == doctest::Approx(0.02));
  CHECK(res.params.values[0] == doctest::Approx(1.0 - 0.1 * dw00).epsilon(1e-12));
  CHECK(res.params.values[1] == doctest::Approx(0.0 - 0.1 * dw01).epsilon(1e-12));
  CHECK(res.params.values[2] == doctest::Approx(0.0 - 0.1 * dw10).epsilon(1e-12));
  CHECK(res.params.values[3] == doctest::Approx(1.0 - 0.1 * dw11).epsilon(1e-12));
  CHECK(res.params.values[4] == doctest::Approx(0.0));  // biases
  CHECK(res.params.values[5] == doctest::Approx(0.0));
}

TEST_CASE("local_train is bitwise deterministic and honors fixed iterations") {
  Rng rng(13);
  MiningConfig mining;
  std::vector<GeoSample> queries, db;
  for (std::uint64_t i = 0; i < 6; ++i) {
    std::vector<double> f(4);
    for (double& v : f) v = rng.uniform(-1, 1);
    queries.push_back(mk(i, meters_north(3.0 * static_cast<double>(i)), 0, f, 50, Role::Query));
  }
  for (std::uint64_t i = 0; i < 20; ++i) {
    std::vector<double> f(4);
    for (double& v : f) v = rng.uniform(-1, 1);
    double lat = i < 10 ? meters_north(2.0 * static_cast<double>(i))
                        : meters_north(500.0 + 10.0 * static_cast<double>(i));
    db.push_back(mk(100 + i, lat, 0, f, 60 + i / 5));
  }
  ClientDataset ds = ClientDataset::build(3, queries, db, mining);
  REQUIRE(!ds.queries.empty());

  EmbedderSpec spec;
  spec.input_dim = 4;
  spec.hidden_dims = {6};
  spec.output_dim = 3;
  ParamVector start = init_params(spec, 1);

  LocalRunConfig cfg;
  cfg.mining.n_neg = 3;
  cfg.train.batch_triplets = 2;
  cfg.train.local_lr = 1e-2;
  cfg.train.seed = 9;
  cfg.train.max_local_iterations = 5;

  LocalTrainResult a = local_train(start, spec, ds, cfg);
  LocalTrainResult b = local_train(start, spec, ds, cfg);
  CHECK(a.params.values == b.params.values);
  CHECK(a.stats.mean_loss == b.stats.mean_loss);
  CHECK(a.params.values != start.values);

  cfg.fixed_iterations = 7;
  LocalTrainResult c = local_train(start, spec, ds, cfg);
  CHECK(c.stats.iterations == 7);
  CHECK(c.stats.samples_processed == 14);
}

TEST_CASE("full triplet objective gradient matches finite differences") {
  Rng rng(555);
  EmbedderSpec spec;
  spec.input_dim = 5;
  spec.hidden_dims = {7};
  spec.output_dim = 4;
  spec.l2_normalize_output = true;

  // Finite differences are only meaningful away from the normalization
  // singularity (pre-normalization norm near zero) and hinge boundaries, so
  // trial data gets resampled until every row is healthy.
  EmbedderSpec raw = spec;
  raw.l2_normalize_output = false;
  auto healthy = [&](const ParamVector& p, const TripletBatch& tb) {
    DescriptorBatch pre = forward(p, raw, tb.x);
    for (std::size_t r = 0; r < pre.descriptors.rows; ++r) {
      double n = 0.0;
      for (double v : pre.row(r)) n += v * v;
      if (std::sqrt(n) < 0.2) return false;
    }
    DescriptorBatch d = forward(p, spec, tb.x);
    std::size_t row = 0;
    for (int k : tb.negatives_per_query) {
      double d_qp = euclidean_distance(d.row(row), d.row(row + 1));
      for (int j = 0; j < k; ++j) {
        double d_qn = euclidean_distance(d.row(row), d.row(row + 2 + static_cast<std::size_t>(j)));
        if (std::abs(d_qp * d_qp - d_qn * d_qn + 0.3) < 1e-2) return false;
      }
      row += 2 + static_cast<std::size_t>(k);
    }
    return true;
  };

  int done = 0;
  for (std::uint64_t attempt = 0; done < 5 && attempt < 100; ++attempt) {
    ParamVector p = init_params(spec, 300 + attempt);
    // Scale the output layer so pre-normalization norms sit well above the
    // degenerate-input guard.
    for (const LayerSlice& s : p.layout) {
      if (s.name == "w1") {
        for (std::size_t i = 0; i < s.rows * s.cols; ++i) p.values[s.offset + i] *= 5.0;
      }
    }
    TripletBatch tb;
    tb.negatives_per_query = {2, 3};
    tb.x = Matrix(4 + 5, 5);
    for (double& v : tb.x.data) v = rng.uniform(-1, 1);
    if (!healthy(p, tb)) continue;
    done += 1;

    auto [loss, grad] = triplet_objective_gradient(p, spec, tb, 0.3, 2.0);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      ParamVector lo = p, hi = p;
      lo.values[i] -= h;
      hi.values[i] += h;
      double llo = triplet_objective_gradient(lo, spec, tb, 0.3, 2.0).first;
      double lhi = triplet_objective_gradient(hi, spec, tb, 0.3, 2.0).first;
      double num = (lhi - llo) / (2 * h);
      double denom = std::max({std::abs(num), std::abs(grad.values[i]), 1e-4});
      worst = std::max(worst, std::abs(num - grad.values[i]) / denom);
    }
    CHECK(worst < 1e-4);
    CHECK(loss >= 0.0);
  }
  CHECK(done == 5);
}
