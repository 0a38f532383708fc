#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <stdexcept>

#include <json.hpp>

#include "oracles.hpp"
#include "seqant/network.hpp"
#include "seqant/rng.hpp"

using namespace seqant;

namespace {

std::vector<Vector> random_stream(std::size_t T, std::size_t dim, Rng& rng,
                                  double lo = -1.0, double hi = 1.0) {
  std::vector<Vector> s(T, Vector(dim));
  for (auto& v : s) {
    for (double& e : v) e = rng.uniform(lo, hi);
  }
  return s;
}

bool params_bitwise_equal(const NetParams& a, const NetParams& b) {
  auto va = param_views(a);
  auto vb = param_views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].name != vb[i].name || va[i].size != vb[i].size) return false;
    if (std::memcmp(va[i].data, vb[i].data, va[i].size * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

NetConfig tiny_config(Variant variant, std::size_t hidden = 4,
                      std::size_t classes = 3) {
  NetConfig cfg;
  cfg.variant = variant;
  cfg.inside_dim = 3;
  cfg.outside_dim = 2;
  cfg.hidden_dim = hidden;
  cfg.fusion_dim = hidden;
  cfg.num_classes = classes;
  return cfg;
}

}  // namespace

TEST_CASE("zero parameters give uniform outputs at every step") {
  for (Variant variant : {Variant::Fusion, Variant::Simple}) {
    NetConfig cfg = tiny_config(variant, 4, 5);
    NetParams p = NetParams::zeros(cfg);
    Rng rng(2);
    const auto xs = random_stream(4, cfg.inside_dim, rng);
    const auto zs = random_stream(4, cfg.outside_dim, rng);
    const SequenceOutput out = forward(p, cfg, xs, zs);
    for (const Vector& y : out.y_seq) {
      for (double e : y) CHECK(e == doctest::Approx(0.2).epsilon(1e-15));
    }
  }
}

TEST_CASE("T=1 scalar fusion network matches hand composition") {
  NetConfig cfg;
  cfg.variant = Variant::Fusion;
  cfg.inside_dim = cfg.outside_dim = cfg.hidden_dim = cfg.fusion_dim = 1;
  cfg.num_classes = 2;
  NetParams p = NetParams::zeros(cfg);
  // hand-set scalar weights
  p.lstm_x.W_i(0, 0) = 0.3, p.lstm_x.b_i[0] = -0.1;
  p.lstm_x.W_f(0, 0) = -0.2, p.lstm_x.b_f[0] = 0.4;
  p.lstm_x.W_c(0, 0) = 0.7, p.lstm_x.b_c[0] = 0.2;
  p.lstm_x.W_o(0, 0) = 0.5, p.lstm_x.V_o(0, 0) = 0.6, p.lstm_x.b_o[0] = -0.3;
  p.lstm_z.W_i(0, 0) = -0.4, p.lstm_z.b_i[0] = 0.2;
  p.lstm_z.W_c(0, 0) = 0.9, p.lstm_z.b_c[0] = -0.5;
  p.lstm_z.W_o(0, 0) = 0.1, p.lstm_z.b_o[0] = 0.3;
  p.fusion_w(0, 0) = 0.8, p.fusion_w(0, 1) = -0.6, p.fusion_b[0] = 0.05;
  p.out_w(0, 0) = 1.2, p.out_w(1, 0) = -0.7;
  p.out_b = {0.1, -0.1};

  const double x = 0.4, z = -0.6;
  auto sg = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
  // inside stream
  const double ix = sg(0.3 * x - 0.1);
  const double gx = std::tanh(0.7 * x + 0.2);
  const double cx = ix * gx;  // forget term vanishes at c_0 = 0
  const double ox = sg(0.5 * x + 0.6 * cx - 0.3);
  const double hx = ox * std::tanh(cx);
  // outside stream
  const double iz = sg(-0.4 * z + 0.2);
  const double gz = std::tanh(0.9 * z - 0.5);
  const double cz = iz * gz;
  const double oz = sg(0.1 * z + 0.3);
  const double hz = oz * std::tanh(cz);
  // fusion + head
  const double e = std::tanh(0.8 * hx - 0.6 * hz + 0.05);
  const double l0 = 1.2 * e + 0.1, l1 = -0.7 * e - 0.1;
  const double y0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));

  const SequenceOutput out = forward(p, cfg, {{x}}, {{z}});
  CHECK(out.y_seq[0][0] == doctest::Approx(y0).epsilon(1e-14));
  CHECK(out.y_seq[0][1] == doctest::Approx(1.0 - y0).epsilon(1e-14));
}

TEST_CASE("T=1 scalar simple network matches hand composition") {
  NetConfig cfg;
  cfg.variant = Variant::Simple;
  cfg.inside_dim = cfg.outside_dim = cfg.hidden_dim = 1;
  cfg.num_classes = 2;
  NetParams p = NetParams::zeros(cfg);
  p.lstm_x.W_i(0, 0) = 0.3, p.lstm_x.W_i(0, 1) = -0.2, p.lstm_x.b_i[0] = 0.1;
  p.lstm_x.W_c(0, 0) = 0.5, p.lstm_x.W_c(0, 1) = 0.4, p.lstm_x.b_c[0] = -0.1;
  p.lstm_x.W_o(0, 0) = -0.6, p.lstm_x.W_o(0, 1) = 0.2, p.lstm_x.b_o[0] = 0.25;
  p.out_w(0, 0) = 0.9, p.out_w(1, 0) = -1.1;

  const double x = -0.3, z = 0.8;
  auto sg = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
  const double i = sg(0.3 * x - 0.2 * z + 0.1);
  const double g = std::tanh(0.5 * x + 0.4 * z - 0.1);
  const double c = i * g;
  const double o = sg(-0.6 * x + 0.2 * z + 0.25);
  const double h = o * std::tanh(c);
  const double l0 = 0.9 * h, l1 = -1.1 * h;
  const double y0 = std::exp(l0) / (std::exp(l0) + std::exp(l1));

  const SequenceOutput out = forward(p, cfg, {{x}}, {{z}});
  CHECK(out.y_seq[0][0] == doctest::Approx(y0).epsilon(1e-14));
}

TEST_CASE("causality: full-sequence forward equals prefix forward exactly") {
  for (Variant variant : {Variant::Fusion, Variant::Simple}) {
    NetConfig cfg = tiny_config(variant);
    NetParams p = NetParams::random_init(cfg, 11, 0.3);
    Rng rng(11);
    const auto xs = random_stream(6, cfg.inside_dim, rng);
    const auto zs = random_stream(6, cfg.outside_dim, rng);
    const SequenceOutput full = forward(p, cfg, xs, zs);
    const SequenceOutput prefix = forward(
        p, cfg, {xs.begin(), xs.begin() + 3}, {zs.begin(), zs.begin() + 3});
    for (std::size_t t = 0; t < 3; ++t) {
      CHECK(full.y_seq[t] == prefix.y_seq[t]);
    }
  }
}

TEST_CASE("forward rejects mismatched stream lengths") {
  NetConfig cfg = tiny_config(Variant::Fusion);
  NetParams p = NetParams::zeros(cfg);
  Rng rng(1);
  CHECK_THROWS_AS(forward(p, cfg, random_stream(3, cfg.inside_dim, rng),
                          random_stream(2, cfg.outside_dim, rng)),
                  std::invalid_argument);
}

TEST_CASE("every output is a probability vector") {
  NetConfig cfg = tiny_config(Variant::Fusion, 5, 4);
  NetParams p = NetParams::random_init(cfg, 9, 0.5);
  Rng rng(10);
  const SequenceOutput out = forward(p, cfg, random_stream(7, cfg.inside_dim, rng),
                                     random_stream(7, cfg.outside_dim, rng));
  for (const Vector& y : out.y_seq) {
    double sum = 0.0;
    for (double e : y) {
      CHECK(e > 0.0);
      sum += e;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("loss time weights: w_T == 1 exactly and consecutive ratio is e") {
  for (std::size_t T : {1u, 3u, 7u}) {
    const auto w = loss_time_weights(T, LossScheme::Exponential);
    CHECK(w.back() == 1.0);
    for (std::size_t t = 0; t + 1 < T; ++t) {
      CHECK(w[t + 1] / w[t] == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
      CHECK(w[t] < w[t + 1]);
    }
  }
  const auto u = loss_time_weights(4, LossScheme::Uniform);
  for (double e : u) CHECK(e == 1.0);
}

TEST_CASE("anticipation loss example values") {
  SequenceOutput perfect;
  perfect.y_seq = {{1.0, 0.0}};
  CHECK(anticipation_loss(perfect, 0, LossScheme::Exponential) == 0.0);
  CHECK(anticipation_loss(perfect, 0, LossScheme::Uniform) == 0.0);

  SequenceOutput half3;
  half3.y_seq = {{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
  const double expected =
      (std::exp(-2.0) + std::exp(-1.0) + 1.0) * std::log(2.0);
  CHECK(std::abs(anticipation_loss(half3, 0, LossScheme::Exponential) -
                 expected) <= 1e-12);
  CHECK(expected == doctest::Approx(1.04195).epsilon(1e-5));

  SequenceOutput half2;
  half2.y_seq = {{0.5, 0.5}, {0.5, 0.5}};
  CHECK(anticipation_loss(half2, 1, LossScheme::Uniform) ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));

  SequenceOutput bad;
  bad.y_seq = {{0.0, 1.0}};
  CHECK_THROWS_AS(anticipation_loss(bad, 0, LossScheme::Uniform),
                  std::domain_error);
}

TEST_CASE("T=1 backward reduces to the single-step softmax-CE gradient") {
  NetConfig cfg = tiny_config(Variant::Fusion, 3, 4);
  NetParams p = NetParams::random_init(cfg, 5, 0.4);
  Rng rng(6);
  const auto xs = random_stream(1, cfg.inside_dim, rng);
  const auto zs = random_stream(1, cfg.outside_dim, rng);
  const SequenceOutput out = forward(p, cfg, xs, zs, true);
  const std::size_t label = 2;
  const NetParams grads = backward(p, cfg, out, label, LossScheme::Exponential);

  // dL/db_y = y - onehot(label), weight e^0 = 1
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    const double expected = out.y_seq[0][k] - (k == label ? 1.0 : 0.0);
    CHECK(grads.out_b[k] == doctest::Approx(expected).epsilon(1e-14));
  }
  // dL/dW_y = (y - onehot) e^T
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    for (std::size_t j = 0; j < cfg.fusion_dim; ++j) {
      const double expected = (out.y_seq[0][k] - (k == label ? 1.0 : 0.0)) *
                              out.caches[0].e[j];
      CHECK(grads.out_w(k, j) == doctest::Approx(expected).epsilon(1e-13));
    }
  }
}

TEST_CASE("doubling the time weights doubles every gradient exactly") {
  NetConfig cfg = tiny_config(Variant::Fusion);
  NetParams p = NetParams::random_init(cfg, 21, 0.3);
  Rng rng(22);
  const auto xs = random_stream(5, cfg.inside_dim, rng);
  const auto zs = random_stream(5, cfg.outside_dim, rng);
  const SequenceOutput out = forward(p, cfg, xs, zs, true);
  std::vector<double> w = loss_time_weights(5, LossScheme::Exponential);
  const NetParams g1 = backward_weighted(p, cfg, out, 1, w);
  for (double& e : w) e *= 2.0;
  const NetParams g2 = backward_weighted(p, cfg, out, 1, w);
  auto v1 = param_views(g1);
  auto v2 = param_views(g2);
  for (std::size_t i = 0; i < v1.size(); ++i) {
    for (std::size_t k = 0; k < v1[i].size; ++k) {
      CHECK(v2[i].data[k] == 2.0 * v1[i].data[k]);
    }
  }
}

TEST_CASE("backward requires caches") {
  NetConfig cfg = tiny_config(Variant::Simple);
  NetParams p = NetParams::zeros(cfg);
  Rng rng(1);
  const SequenceOutput out = forward(p, cfg, random_stream(2, 3, rng),
                                     random_stream(2, 2, rng), false);
  CHECK_THROWS_AS(backward(p, cfg, out, 0, LossScheme::Uniform),
                  std::invalid_argument);
}

TEST_CASE("full-sequence gradients match finite differences (tiny nets)") {
  // hidden 4, fusion 4, K=3, T=5, seed 3; all four variant/loss combinations
  for (Variant variant : {Variant::Fusion, Variant::Simple}) {
    for (LossScheme scheme : {LossScheme::Exponential, LossScheme::Uniform}) {
      NetConfig cfg = tiny_config(variant, 4, 3);
      NetParams p = NetParams::random_init(cfg, 3, 0.3);
      Rng rng(3);
      const auto xs = random_stream(5, cfg.inside_dim, rng);
      const auto zs = random_stream(5, cfg.outside_dim, rng);
      const SequenceOutput out = forward(p, cfg, xs, zs, true);
      const NetParams analytic = backward(p, cfg, out, 1, scheme);

      auto views = param_views(analytic);
      std::size_t flat = 0;
      for (const auto& view : views) {
        for (std::size_t k = 0; k < view.size; ++k, ++flat) {
          const double numeric =
              oracles::net_numeric_gradient(p, cfg, xs, zs, 1, scheme, flat);
          CHECK(oracles::rel_error(view.data[k], numeric) < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("swapping streams and parameters together changes nothing") {
  NetConfig cfg;
  cfg.variant = Variant::Fusion;
  cfg.inside_dim = cfg.outside_dim = 2;
  cfg.hidden_dim = 3;
  cfg.fusion_dim = 4;
  cfg.num_classes = 3;
  NetParams p = NetParams::random_init(cfg, 31, 0.4);

  NetParams swapped = p;
  std::swap(swapped.lstm_x, swapped.lstm_z);
  for (std::size_t i = 0; i < cfg.fusion_dim; ++i) {
    for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
      swapped.fusion_w(i, j) = p.fusion_w(i, cfg.hidden_dim + j);
      swapped.fusion_w(i, cfg.hidden_dim + j) = p.fusion_w(i, j);
    }
  }

  Rng rng(32);
  const auto xs = random_stream(5, 2, rng);
  const auto zs = random_stream(5, 2, rng);
  const SequenceOutput a = forward(p, cfg, xs, zs);
  const SequenceOutput b = forward(swapped, cfg, zs, xs);
  // the fusion dot products run over the two blocks in swapped order, so
  // agreement is at roundoff level rather than bitwise
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
      CHECK(std::abs(a.y_seq[t][k] - b.y_seq[t][k]) <= 1e-14);
    }
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  for (Variant variant : {Variant::Fusion, Variant::Simple}) {
    NetConfig cfg = tiny_config(variant, 4, 3);
    Model m{cfg, NetParams::random_init(cfg, 77, 0.08),
            {"left_lane_change", "right_lane_change", "straight"}};
    const std::string text = model_to_json(m);
    const Model back = model_from_json(text);
    CHECK(back.config.variant == cfg.variant);
    CHECK(back.config.hidden_dim == cfg.hidden_dim);
    CHECK(back.class_names == m.class_names);
    CHECK(params_bitwise_equal(back.params, m.params));
    CHECK(model_to_json(back) == text);
  }
}

TEST_CASE("checkpoint loading validates shapes and parameter sets") {
  NetConfig cfg = tiny_config(Variant::Fusion, 4, 3);
  Model m{cfg, NetParams::random_init(cfg, 7, 0.08),
          {"left_lane_change", "right_lane_change", "straight"}};
  const std::string text = model_to_json(m);

  auto mutate = [&](const std::function<void(nlohmann::json&)>& fn) {
    nlohmann::json j = nlohmann::json::parse(text);
    fn(j);
    return j.dump();
  };
  CHECK_THROWS(model_from_json(mutate(
      [](nlohmann::json& j) { j["params"]["lstm_x.W_i"]["shape"] = {2, 2}; })));
  CHECK_THROWS(model_from_json(
      mutate([](nlohmann::json& j) { j["params"].erase("fusion.W"); })));
  CHECK_THROWS(model_from_json(mutate([](nlohmann::json& j) {
    j["params"]["lstm_x.b_i"]["data"].push_back(0.0);
  })));
  CHECK_THROWS(model_from_json(
      mutate([](nlohmann::json& j) { j["class_names"] = {"a", "b"}; })));
  CHECK_THROWS(model_from_json(
      mutate([](nlohmann::json& j) { j["format_version"] = 99; })));
}

TEST_CASE("straight_index finds the straight class") {
  NetConfig cfg = tiny_config(Variant::Fusion, 2, 3);
  Model m{cfg, NetParams::zeros(cfg), {"left_turn", "right_turn", "straight"}};
  CHECK(m.straight_index() == 2);
  m.class_names = {"left_turn", "right_turn", "left_lane_change"};
  CHECK_THROWS_AS(m.straight_index(), std::invalid_argument);
}
