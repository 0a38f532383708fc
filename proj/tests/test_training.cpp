#include <doctest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "oracles.hpp"
#include "seqant/rng.hpp"
#include "seqant/training.hpp"

using namespace seqant;

namespace {

// small events with arbitrary dims; augmentation only cares about structure
Dataset toy_dataset(std::size_t n, std::size_t T, std::uint64_t seed = 1) {
  Dataset d;
  d.inside_dim = 2;
  d.outside_dim = 1;
  Rng rng(seed);
  const auto& names = canonical_class_names();
  for (std::size_t i = 0; i < n; ++i) {
    Event ev;
    ev.event_id = "ev" + std::to_string(i);
    ev.label = names[i % names.size()];
    for (std::size_t t = 0; t < T; ++t) {
      ev.inside.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1)});
      ev.outside.push_back({rng.uniform(-1, 1)});
    }
    d.events.push_back(std::move(ev));
  }
  return d;
}

bool events_equal(const Event& a, const Event& b) {
  return a.event_id == b.event_id && a.label == b.label &&
         a.inside == b.inside && a.outside == b.outside;
}

bool params_bitwise_equal(const NetParams& a, const NetParams& b) {
  auto va = param_views(a);
  auto vb = param_views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (std::memcmp(va[i].data, vb[i].data, va[i].size * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("augment reaches the paper's 700 -> 2250 ratio") {
  const Dataset d = toy_dataset(700, 8);
  TrainConfig cfg;
  cfg.augmentation_factor = 3.214;
  cfg.min_subseq_len = 5;
  const Dataset aug = augment(d, cfg);
  CHECK(aug.events.size() == 2250);
  // originals come through untouched, in order
  for (std::size_t i = 0; i < 700; ++i) {
    CHECK(events_equal(aug.events[i], d.events[i]));
  }
}

TEST_CASE("augment with factor 1 returns the dataset unchanged") {
  const Dataset d = toy_dataset(20, 7);
  TrainConfig cfg;
  cfg.augmentation_factor = 1.0;
  const Dataset aug = augment(d, cfg);
  REQUIRE(aug.events.size() == d.events.size());
  for (std::size_t i = 0; i < d.events.size(); ++i) {
    CHECK(events_equal(aug.events[i], d.events[i]));
  }
}

TEST_CASE("every augmented sub-event is a contiguous slice of its source") {
  const Dataset d = toy_dataset(30, 9, 5);
  TrainConfig cfg;
  cfg.augmentation_factor = 4.0;
  cfg.min_subseq_len = 5;
  cfg.seed = 3;
  const Dataset aug = augment(d, cfg);
  REQUIRE(aug.events.size() == 120);

  for (std::size_t i = d.events.size(); i < aug.events.size(); ++i) {
    const Event& sub = aug.events[i];
    const std::string source_id = augmentation_source(sub.event_id);
    CHECK(source_id != sub.event_id);  // extras carry a '#'
    const Event* src = nullptr;
    for (const Event& ev : d.events) {
      if (ev.event_id == source_id) src = &ev;
    }
    REQUIRE(src != nullptr);
    CHECK(sub.label == src->label);
    CHECK(sub.length() >= cfg.min_subseq_len);
    CHECK(sub.length() <= src->length());

    // containment: both streams must match the source at one shared offset
    bool found = false;
    for (std::size_t off = 0; off + sub.length() <= src->length(); ++off) {
      bool match = true;
      for (std::size_t t = 0; t < sub.length() && match; ++t) {
        match = sub.inside[t] == src->inside[off + t] &&
                sub.outside[t] == src->outside[off + t];
      }
      if (match) {
        found = true;
        break;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("augment sizes land exactly on round(factor * N)") {
  Rng rng(9);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t n = 5 + rng.below(40);
    const Dataset d = toy_dataset(n, 6 + rng.below(5), rng.raw());
    TrainConfig cfg;
    cfg.augmentation_factor = 1.0 + rng.uniform() * 4.0;
    cfg.min_subseq_len = 5;
    cfg.seed = rng.raw();
    const Dataset aug = augment(d, cfg);
    const auto target = static_cast<std::size_t>(
        std::llround(cfg.augmentation_factor * static_cast<double>(n)));
    CHECK(aug.events.size() >= target - 1);
    CHECK(aug.events.size() <= target + 1);
  }
}

TEST_CASE("augment skips too-short events but keeps them in the output") {
  Dataset d = toy_dataset(4, 10);
  // shrink one event below min_subseq_len
  d.events[1].inside.resize(3);
  d.events[1].outside.resize(3);
  TrainConfig cfg;
  cfg.augmentation_factor = 3.0;
  cfg.min_subseq_len = 5;
  const Dataset aug = augment(d, cfg);
  CHECK(aug.events.size() == 12);
  for (std::size_t i = d.events.size(); i < aug.events.size(); ++i) {
    CHECK(augmentation_source(aug.events[i].event_id) != "ev1");
  }

  Dataset all_short = toy_dataset(3, 3);
  const Dataset aug2 = augment(all_short, cfg);
  CHECK(aug2.events.size() == 3);  // nothing to draw from, originals only

  Dataset empty;
  empty.events.clear();
  CHECK_THROWS_AS(augment(empty, cfg), std::invalid_argument);
}

TEST_CASE("augment is deterministic in the seed") {
  const Dataset d = toy_dataset(12, 8);
  TrainConfig cfg;
  cfg.augmentation_factor = 2.5;
  cfg.seed = 42;
  const Dataset a = augment(d, cfg);
  const Dataset b = augment(d, cfg);
  REQUIRE(a.events.size() == b.events.size());
  for (std::size_t i = 0; i < a.events.size(); ++i) {
    CHECK(events_equal(a.events[i], b.events[i]));
  }
}

TEST_CASE("rmsprop: zero gradient decays the accumulator, params unchanged") {
  NetConfig net;
  net.variant = Variant::Simple;
  net.inside_dim = 2, net.outside_dim = 1, net.hidden_dim = 2, net.num_classes = 2;
  NetParams p = NetParams::random_init(net, 1);
  const NetParams before = p;
  NetParams g = NetParams::zeros(net);
  RmspropState st = RmspropState::zeros(param_count(p));
  for (double& a : st.mean_square) a = 0.5;
  TrainConfig cfg;
  rmsprop_update(p, g, st, cfg);
  CHECK(params_bitwise_equal(p, before));
  for (double a : st.mean_square) CHECK(a == doctest::Approx(0.45).epsilon(1e-15));
}

TEST_CASE("rmsprop first-step hand arithmetic") {
  NetConfig net;
  net.variant = Variant::Simple;
  net.inside_dim = 1, net.outside_dim = 1, net.hidden_dim = 1, net.num_classes = 2;
  NetParams p = NetParams::zeros(net);
  NetParams g = NetParams::zeros(net);
  auto gv = param_views(g);
  for (auto& view : gv) {
    for (std::size_t k = 0; k < view.size; ++k) view.data[k] = 1.0;
  }
  RmspropState st = RmspropState::zeros(param_count(p));
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.rmsprop_decay = 0.9;
  cfg.rmsprop_epsilon = 0.0;
  rmsprop_update(p, g, st, cfg);
  // acc = 0.1, step = -lr / sqrt(0.1) = -3.16228 * lr
  for (double a : st.mean_square) CHECK(a == doctest::Approx(0.1).epsilon(1e-15));
  for (const auto& view : param_views(p)) {
    for (std::size_t k = 0; k < view.size; ++k) {
      CHECK(view.data[k] ==
            doctest::Approx(-0.01 * 3.1622776601683795).epsilon(1e-12));
    }
  }
}

TEST_CASE("rmsprop constant-gradient step approaches lr * sign(g)") {
  NetConfig net;
  net.variant = Variant::Simple;
  net.inside_dim = 1, net.outside_dim = 1, net.hidden_dim = 1, net.num_classes = 2;
  NetParams p = NetParams::zeros(net);
  NetParams g = NetParams::zeros(net);
  auto gv = param_views(g);
  for (auto& view : gv) {
    for (std::size_t k = 0; k < view.size; ++k) view.data[k] = -0.37;
  }
  RmspropState st = RmspropState::zeros(param_count(p));
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.rmsprop_epsilon = 0.0;
  double prev = 0.0;
  double step = 0.0;
  for (int it = 0; it < 500; ++it) {
    prev = param_views(p)[0].data[0];
    rmsprop_update(p, g, st, cfg);
    step = param_views(p)[0].data[0] - prev;
  }
  // accumulator fixed point is g^2, so |step| -> lr
  CHECK(std::abs(step) == doctest::Approx(cfg.learning_rate).epsilon(0.01));
  CHECK(step > 0.0);  // negative gradient moves the parameter up
}

TEST_CASE("rmsprop accumulator never exceeds max(previous, g^2)") {
  NetConfig net;
  net.variant = Variant::Simple;
  net.inside_dim = 2, net.outside_dim = 1, net.hidden_dim = 3, net.num_classes = 3;
  NetParams p = NetParams::random_init(net, 3);
  RmspropState st = RmspropState::zeros(param_count(p));
  Rng rng(8);
  TrainConfig cfg;
  for (int it = 0; it < 50; ++it) {
    NetParams g = NetParams::zeros(net);
    std::vector<double> gflat;
    for (auto& view : param_views(g)) {
      for (std::size_t k = 0; k < view.size; ++k) {
        view.data[k] = rng.uniform(-2, 2);
        gflat.push_back(view.data[k]);
      }
    }
    const std::vector<double> before = st.mean_square;
    rmsprop_update(p, g, st, cfg);
    for (std::size_t i = 0; i < before.size(); ++i) {
      CHECK(st.mean_square[i] <=
            std::max(before[i], gflat[i] * gflat[i]) + 1e-15);
    }
  }
}

TEST_CASE("rmsprop rejects non-finite gradients naming the parameter") {
  NetConfig net;
  net.variant = Variant::Simple;
  net.inside_dim = 1, net.outside_dim = 1, net.hidden_dim = 1, net.num_classes = 2;
  NetParams p = NetParams::zeros(net);
  NetParams g = NetParams::zeros(net);
  param_views(g)[1].data[0] = std::nan("");
  RmspropState st = RmspropState::zeros(param_count(p));
  TrainConfig cfg;
  try {
    rmsprop_update(p, g, st, cfg);
    FAIL("expected throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find(param_views(p)[1].name) !=
          std::string::npos);
  }
}

TEST_CASE("batch gradients: parallel equals serial bit-exactly") {
  SyntheticConfig syn;
  syn.events_per_class = 3;
  syn.t_min = 4, syn.t_max = 8;
  const Dataset d = generate_synthetic(syn);
  NetConfig net;
  net.hidden_dim = 6;
  net.fusion_dim = 6;
  NetParams p = NetParams::random_init(net, 2);
  std::vector<TrainExample> batch;
  for (const Event& ev : d.events) batch.push_back({&ev, d.label_index(ev.label)});
  double loss_s = 0.0, loss_p = 0.0;
  const NetParams gs = batch_gradients(p, net, batch, LossScheme::Exponential,
                                       false, &loss_s);
  const NetParams gp = batch_gradients(p, net, batch, LossScheme::Exponential,
                                       true, &loss_p);
  CHECK(loss_s == loss_p);
  CHECK(params_bitwise_equal(gs, gp));
}

TEST_CASE("training loss decreases on a separable dataset") {
  SyntheticConfig syn;
  syn.events_per_class = 6;
  syn.t_min = 6, syn.t_max = 10;
  syn.signal_gain = 2.0;
  syn.noise_std = 0.1;
  syn.seed = 1;
  const Dataset d = generate_synthetic(syn);
  NetConfig net;
  net.hidden_dim = 16;
  net.fusion_dim = 16;
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 1;
  cfg.learning_rate = 1e-3;  // scaled up for the tiny dataset
  cfg.augmentation_factor = 1.0;
  auto [params, history] = train(d, net, cfg);
  REQUIRE(history.epochs.size() == 30);
  for (std::size_t e = 1; e < 5; ++e) {
    CHECK(history.epochs[e].mean_loss < history.epochs[e - 1].mean_loss);
  }
  CHECK(history.epochs.back().mean_loss < history.epochs.front().mean_loss);
}

TEST_CASE("zero epochs returns the untouched initialization") {
  const Dataset d = toy_dataset(6, 6);
  NetConfig net;
  net.inside_dim = 2, net.outside_dim = 1;
  net.hidden_dim = 4, net.fusion_dim = 4;
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 77;
  auto [params, history] = train(d, net, cfg);
  CHECK(history.epochs.empty());
  CHECK(params_bitwise_equal(params, NetParams::random_init(net, 77)));
}

TEST_CASE("training is bit-deterministic in the seed") {
  SyntheticConfig syn;
  syn.events_per_class = 3;
  syn.t_min = 4, syn.t_max = 7;
  const Dataset d = generate_synthetic(syn);
  NetConfig net;
  net.hidden_dim = 5, net.fusion_dim = 5;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 12;
  cfg.batch_size = 2;
  auto [p1, h1] = train(d, net, cfg);
  auto [p2, h2] = train(d, net, cfg);
  CHECK(params_bitwise_equal(p1, p2));
  REQUIRE(h1.epochs.size() == h2.epochs.size());
  for (std::size_t e = 0; e < h1.epochs.size(); ++e) {
    CHECK(h1.epochs[e].mean_loss == h2.epochs[e].mean_loss);
  }
  CHECK(h1.final_param_checksum == h2.final_param_checksum);
}

TEST_CASE("train rejects dimension mismatches") {
  const Dataset d = toy_dataset(4, 5);  // dims (2,1)
  NetConfig net;                        // dims (12,6)
  TrainConfig cfg;
  CHECK_THROWS_AS(train(d, net, cfg), std::invalid_argument);
}

TEST_CASE("training aborts with context when the loss diverges") {
  SyntheticConfig syn;
  syn.events_per_class = 2;
  syn.t_min = 4, syn.t_max = 6;
  syn.signal_gain = 5.0;
  const Dataset d = generate_synthetic(syn);
  NetConfig net;
  net.hidden_dim = 4, net.fusion_dim = 4;
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.learning_rate = 30.0;  // absurd step size forces saturation
  bool aborted = false;
  try {
    train(d, net, cfg);
  } catch (const std::runtime_error& e) {
    aborted = true;
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
  CHECK(aborted);
}

TEST_CASE("gradient_check stays below 1e-5 on the spec's seeds") {
  NetConfig fusion_exp;
  fusion_exp.variant = Variant::Fusion;
  fusion_exp.loss_scheme = LossScheme::Exponential;
  CHECK(gradient_check(fusion_exp, 3) < 1e-5);

  NetConfig simple_uniform;
  simple_uniform.variant = Variant::Simple;
  simple_uniform.loss_scheme = LossScheme::Uniform;
  CHECK(gradient_check(simple_uniform, 4) < 1e-5);
}

TEST_CASE("gradient check report identifies a corrupted gradient") {
  NetConfig cfg;
  const GradCheckReport honest = gradient_check_report(cfg, 5, false);
  CHECK(honest.max_rel_error < 1e-5);
  const GradCheckReport corrupt = gradient_check_report(cfg, 5, true);
  CHECK(corrupt.max_rel_error > 1e-5);
}

TEST_CASE("zero-parameter net: analytic, numeric and closed form agree") {
  NetConfig cfg;
  cfg.variant = Variant::Fusion;
  cfg.inside_dim = 3, cfg.outside_dim = 2;
  cfg.hidden_dim = 4, cfg.fusion_dim = 4, cfg.num_classes = 4;
  NetParams p = NetParams::zeros(cfg);
  Rng rng(6);
  std::vector<Vector> xs(3, Vector(3)), zs(3, Vector(2));
  for (auto& v : xs) {
    for (double& e : v) e = rng.uniform(-1, 1);
  }
  for (auto& v : zs) {
    for (double& e : v) e = rng.uniform(-1, 1);
  }
  const std::size_t label = 1;
  const SequenceOutput out = forward(p, cfg, xs, zs, true);
  const NetParams analytic = backward(p, cfg, out, label, LossScheme::Uniform);

  // with all weights zero the only nonzero gradient is the output bias:
  // sum_t (y_t - onehot) = T * (1/K - onehot)
  auto views = param_views(analytic);
  std::size_t flat = 0;
  for (const auto& view : views) {
    for (std::size_t k = 0; k < view.size; ++k, ++flat) {
      const double numeric = oracles::net_numeric_gradient(
          p, cfg, xs, zs, label, LossScheme::Uniform, flat);
      double expected = 0.0;
      if (view.name == "output.b") {
        expected = 3.0 * (0.25 - (k == label ? 1.0 : 0.0));
      }
      CHECK(std::abs(view.data[k] - expected) < 1e-12);
      CHECK(std::abs(numeric - expected) < 1e-7);
    }
  }
}
