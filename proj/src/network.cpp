#include "seqant/network.hpp"

#include <quadmath.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "seqant/rng.hpp"

namespace seqant {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

template <class Params, class View>
std::vector<View> collect_views(Params& p) {
  std::vector<View> out;
  auto mat = [&](const char* name, auto& m) {
    if (m.size() > 0) out.push_back({name, m.rows, m.cols, m.data.data(), m.size()});
  };
  auto vec = [&](const char* name, auto& v) {
    if (!v.empty()) out.push_back({name, v.size(), 0, v.data(), v.size()});
  };
  auto lstm = [&](const std::string& prefix, auto& l) {
    if (l.W_i.size() == 0) return;
    auto mp = [&](const char* n, auto& m) { mat((prefix + n).c_str(), m); };
    auto vp = [&](const char* n, auto& v) { vec((prefix + n).c_str(), v); };
    mp("W_i", l.W_i), mp("U_i", l.U_i), mp("V_i", l.V_i), vp("b_i", l.b_i);
    mp("W_f", l.W_f), mp("U_f", l.U_f), mp("V_f", l.V_f), vp("b_f", l.b_f);
    mp("W_c", l.W_c), mp("U_c", l.U_c), vp("b_c", l.b_c);
    mp("W_o", l.W_o), mp("U_o", l.U_o), mp("V_o", l.V_o), vp("b_o", l.b_o);
  };
  lstm("lstm_x.", p.lstm_x);
  lstm("lstm_z.", p.lstm_z);
  mat("fusion.W", p.fusion_w);
  vec("fusion.b", p.fusion_b);
  mat("output.W", p.out_w);
  vec("output.b", p.out_b);
  return out;
}

}  // namespace

std::string to_string(Variant v) {
  return v == Variant::Fusion ? "fusion" : "simple";
}
std::string to_string(LossScheme s) {
  return s == LossScheme::Exponential ? "exponential" : "uniform";
}
std::string to_string(PeepholeStyle s) {
  return s == PeepholeStyle::Full ? "full" : "diagonal";
}

Variant variant_from_string(const std::string& s) {
  if (s == "fusion") return Variant::Fusion;
  if (s == "simple") return Variant::Simple;
  throw std::invalid_argument("unknown variant '" + s + "' (fusion|simple)");
}

LossScheme loss_scheme_from_string(const std::string& s) {
  if (s == "exponential" || s == "exp") return LossScheme::Exponential;
  if (s == "uniform") return LossScheme::Uniform;
  throw std::invalid_argument("unknown loss scheme '" + s +
                              "' (exponential|uniform)");
}

PeepholeStyle peephole_from_string(const std::string& s) {
  if (s == "full") return PeepholeStyle::Full;
  if (s == "diagonal") return PeepholeStyle::Diagonal;
  throw std::invalid_argument("unknown peephole style '" + s +
                              "' (full|diagonal)");
}

void NetConfig::validate() const {
  require(inside_dim >= 1, "NetConfig: inside_dim must be >= 1");
  require(outside_dim >= 1, "NetConfig: outside_dim must be >= 1");
  require(hidden_dim >= 1, "NetConfig: hidden_dim must be >= 1");
  require(num_classes >= 1, "NetConfig: num_classes must be >= 1");
  if (variant == Variant::Fusion) {
    require(fusion_dim >= 1, "NetConfig: fusion_dim must be >= 1");
  }
}

NetParams NetParams::zeros(const NetConfig& cfg) {
  cfg.validate();
  NetParams p;
  if (cfg.variant == Variant::Fusion) {
    p.lstm_x = LstmParams::zeros(cfg.inside_dim, cfg.hidden_dim, cfg.peephole);
    p.lstm_z = LstmParams::zeros(cfg.outside_dim, cfg.hidden_dim, cfg.peephole);
    p.fusion_w = Matrix(cfg.fusion_dim, 2 * cfg.hidden_dim);
    p.fusion_b = Vector(cfg.fusion_dim, 0.0);
    p.out_w = Matrix(cfg.num_classes, cfg.fusion_dim);
  } else {
    p.lstm_x = LstmParams::zeros(cfg.inside_dim + cfg.outside_dim,
                                 cfg.hidden_dim, cfg.peephole);
    p.out_w = Matrix(cfg.num_classes, cfg.hidden_dim);
  }
  p.out_b = Vector(cfg.num_classes, 0.0);
  return p;
}

NetParams NetParams::random_init(const NetConfig& cfg, std::uint64_t seed,
                                 double scale) {
  NetParams p = zeros(cfg);
  Rng rng(seed);
  for (auto& view : param_views(p)) {
    for (std::size_t k = 0; k < view.size; ++k) {
      view.data[k] = rng.uniform(-scale, scale);
    }
  }
  return p;
}

std::vector<ParamView> param_views(NetParams& p) {
  return collect_views<NetParams, ParamView>(p);
}

std::vector<ConstParamView> param_views(const NetParams& p) {
  return collect_views<const NetParams, ConstParamView>(p);
}

std::size_t param_count(const NetParams& p) {
  std::size_t n = 0;
  for (const auto& v : param_views(p)) n += v.size;
  return n;
}

StreamState init_stream_state(const NetConfig& cfg) {
  StreamState s;
  s.x = LstmState::zeros(cfg.hidden_dim);
  if (cfg.variant == Variant::Fusion) s.z = LstmState::zeros(cfg.hidden_dim);
  return s;
}

Vector forward_step(const NetParams& p, const NetConfig& cfg, const Vector& x_t,
                    const Vector& z_t, StreamState& state, StepCaches* cache) {
  if (cfg.variant == Variant::Fusion) {
    state.x = lstm_step(p.lstm_x, x_t, state.x, cache ? &cache->x_step : nullptr);
    state.z = lstm_step(p.lstm_z, z_t, state.z, cache ? &cache->z_step : nullptr);
    Vector concat(2 * cfg.hidden_dim);
    std::copy(state.x.h.begin(), state.x.h.end(), concat.begin());
    std::copy(state.z.h.begin(), state.z.h.end(),
              concat.begin() + static_cast<std::ptrdiff_t>(cfg.hidden_dim));
    Vector e = p.fusion_b;
    matvec_add(p.fusion_w, concat, e);
    for (double& v : e) v = std::tanh(v);
    Vector logits = p.out_b;
    matvec_add(p.out_w, e, logits);
    if (cache) {
      cache->concat = std::move(concat);
      cache->e = std::move(e);
    }
    return softmax(logits);
  }
  Vector joint(x_t.size() + z_t.size());
  std::copy(x_t.begin(), x_t.end(), joint.begin());
  std::copy(z_t.begin(), z_t.end(),
            joint.begin() + static_cast<std::ptrdiff_t>(x_t.size()));
  state.x = lstm_step(p.lstm_x, joint, state.x, cache ? &cache->x_step : nullptr);
  Vector logits = p.out_b;
  matvec_add(p.out_w, state.x.h, logits);
  return softmax(logits);
}

SequenceOutput forward(const NetParams& p, const NetConfig& cfg,
                       const std::vector<Vector>& inside,
                       const std::vector<Vector>& outside, bool training) {
  require(inside.size() == outside.size(),
          "forward: stream lengths differ (" + std::to_string(inside.size()) +
              " vs " + std::to_string(outside.size()) + ")");
  require(!inside.empty(), "forward: empty sequence");
  SequenceOutput out;
  out.y_seq.reserve(inside.size());
  if (training) out.caches.resize(inside.size());
  StreamState state = init_stream_state(cfg);
  for (std::size_t t = 0; t < inside.size(); ++t) {
    out.y_seq.push_back(forward_step(p, cfg, inside[t], outside[t], state,
                                     training ? &out.caches[t] : nullptr));
  }
  return out;
}

std::vector<double> loss_time_weights(std::size_t T, LossScheme scheme) {
  std::vector<double> w(T, 1.0);
  if (scheme == LossScheme::Exponential) {
    for (std::size_t t = 0; t < T; ++t) {
      w[t] = std::exp(-static_cast<double>(T - 1 - t));
    }
  }
  return w;
}

double anticipation_loss(const SequenceOutput& out, std::size_t label_index,
                         LossScheme scheme) {
  const std::size_t T = out.length();
  require(T >= 1, "anticipation_loss: empty output");
  require(label_index < out.y_seq[0].size(),
          "anticipation_loss: label index " + std::to_string(label_index) +
              " out of range for " + std::to_string(out.y_seq[0].size()) +
              " classes");
  const std::vector<double> w = loss_time_weights(T, scheme);
  double loss = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double p = out.y_seq[t][label_index];
    if (p <= 0.0) {
      throw std::domain_error("anticipation_loss: probability " +
                              std::to_string(p) + " at step " +
                              std::to_string(t + 1));
    }
    loss += -w[t] * std::log(p);
  }
  return loss;
}

NetParams backward_weighted(const NetParams& p, const NetConfig& cfg,
                            const SequenceOutput& out, std::size_t label_index,
                            const std::vector<double>& weights) {
  if (!out.has_caches()) {
    throw std::invalid_argument("backward: sequence output carries no caches");
  }
  const std::size_t T = out.length();
  require(weights.size() == T, "backward: weight count does not match steps");
  require(label_index < cfg.num_classes, "backward: label index out of range");

  NetParams grads = NetParams::zeros(cfg);
  const std::size_t hid = cfg.hidden_dim;
  Vector dh_x(hid, 0.0), dc_x(hid, 0.0);
  Vector dh_z(hid, 0.0), dc_z(hid, 0.0);

  for (std::size_t ti = T; ti-- > 0;) {
    const StepCaches& ca = out.caches[ti];
    // fused softmax cross-entropy gradient, scaled by the time weight
    Vector dy = out.y_seq[ti];
    dy[label_index] -= 1.0;
    for (double& v : dy) v *= weights[ti];

    if (cfg.variant == Variant::Fusion) {
      add_outer(grads.out_w, dy, ca.e);
      axpy(1.0, dy, grads.out_b);
      Vector de = matvec_transposed(p.out_w, dy);
      Vector da_f(cfg.fusion_dim);
      for (std::size_t j = 0; j < cfg.fusion_dim; ++j) {
        da_f[j] = de[j] * (1.0 - ca.e[j] * ca.e[j]);
      }
      add_outer(grads.fusion_w, da_f, ca.concat);
      axpy(1.0, da_f, grads.fusion_b);
      Vector dcat = matvec_transposed(p.fusion_w, da_f);
      for (std::size_t k = 0; k < hid; ++k) {
        dh_x[k] += dcat[k];
        dh_z[k] += dcat[hid + k];
      }
      auto rx = lstm_step_backward(p.lstm_x, ca.x_step, dh_x, dc_x, grads.lstm_x);
      dh_x = std::move(rx.grad_prev_h);
      dc_x = std::move(rx.grad_prev_c);
      auto rz = lstm_step_backward(p.lstm_z, ca.z_step, dh_z, dc_z, grads.lstm_z);
      dh_z = std::move(rz.grad_prev_h);
      dc_z = std::move(rz.grad_prev_c);
    } else {
      add_outer(grads.out_w, dy, ca.x_step.h);
      axpy(1.0, dy, grads.out_b);
      Vector dh = matvec_transposed(p.out_w, dy);
      axpy(1.0, dh_x, dh);
      auto rx = lstm_step_backward(p.lstm_x, ca.x_step, dh, dc_x, grads.lstm_x);
      dh_x = std::move(rx.grad_prev_h);
      dc_x = std::move(rx.grad_prev_c);
    }
  }
  return grads;
}

NetParams backward(const NetParams& p, const NetConfig& cfg,
                   const SequenceOutput& out, std::size_t label_index,
                   LossScheme scheme) {
  return backward_weighted(p, cfg, out, label_index,
                           loss_time_weights(out.length(), scheme));
}

namespace {

// Quad-precision mirror of the forward pass for finite-difference checks.
// Weights are read straight from the double-precision views, with the
// requested perturbation injected at one flat position.
using Quad = __float128;

Quad quad_exp(Quad x) { return expq(x); }
Quad quad_log(Quad x) { return logq(x); }
Quad quad_tanh(Quad x) { return tanhq(x); }
Quad quad_sigmoid(Quad x) { return Quad(1) / (Quad(1) + expq(-x)); }

class QuadParams {
 public:
  QuadParams(const NetParams& p, std::size_t flat_index, Quad delta)
      : views_(param_views(p)), flat_index_(flat_index), delta_(delta) {
    std::size_t base = 0;
    for (const auto& v : views_) {
      bases_.push_back(base);
      base += v.size;
    }
  }

  const ConstParamView& view(const std::string& name, std::size_t* base) const {
    for (std::size_t i = 0; i < views_.size(); ++i) {
      if (views_[i].name == name) {
        *base = bases_[i];
        return views_[i];
      }
    }
    throw std::logic_error("reference_loss: no view named " + name);
  }

  Quad at(const ConstParamView& v, std::size_t base, std::size_t i) const {
    Quad x = static_cast<Quad>(v.data[i]);
    if (base + i == flat_index_) x += delta_;
    return x;
  }

 private:
  std::vector<ConstParamView> views_;
  std::vector<std::size_t> bases_;
  std::size_t flat_index_;
  Quad delta_;
};

using QuadVec = std::vector<Quad>;

struct QuadLstmRefs {
  const QuadParams& table;
  std::string prefix;

  void matvec_add(const std::string& name, const QuadVec& x, QuadVec& out) const {
    std::size_t base = 0;
    const ConstParamView& v = table.view(prefix + name, &base);
    for (std::size_t i = 0; i < v.rows; ++i) {
      Quad acc = 0;
      for (std::size_t j = 0; j < v.cols; ++j) {
        acc += table.at(v, base, i * v.cols + j) * x[j];
      }
      out[i] += acc;
    }
  }

  void peephole_add(const std::string& name, const QuadVec& c, QuadVec& out) const {
    std::size_t base = 0;
    const ConstParamView& v = table.view(prefix + name, &base);
    if (v.cols == 1) {
      for (std::size_t k = 0; k < v.rows; ++k) {
        out[k] += table.at(v, base, k) * c[k];
      }
    } else {
      matvec_add(name, c, out);
    }
  }

  QuadVec bias(const std::string& name) const {
    std::size_t base = 0;
    const ConstParamView& v = table.view(prefix + name, &base);
    QuadVec out(v.rows);
    for (std::size_t k = 0; k < v.rows; ++k) out[k] = table.at(v, base, k);
    return out;
  }

  void step(const QuadVec& x, QuadVec& h, QuadVec& c) const {
    const std::size_t hid = h.size();
    QuadVec a_i = bias("b_i");
    matvec_add("W_i", x, a_i);
    matvec_add("U_i", h, a_i);
    peephole_add("V_i", c, a_i);
    for (auto& e : a_i) e = quad_sigmoid(e);
    QuadVec a_f = bias("b_f");
    matvec_add("W_f", x, a_f);
    matvec_add("U_f", h, a_f);
    peephole_add("V_f", c, a_f);
    for (auto& e : a_f) e = quad_sigmoid(e);
    QuadVec g = bias("b_c");
    matvec_add("W_c", x, g);
    matvec_add("U_c", h, g);
    for (auto& e : g) e = quad_tanh(e);
    QuadVec c_new(hid);
    for (std::size_t k = 0; k < hid; ++k) {
      c_new[k] = a_f[k] * c[k] + a_i[k] * g[k];
    }
    QuadVec a_o = bias("b_o");
    matvec_add("W_o", x, a_o);
    matvec_add("U_o", h, a_o);
    peephole_add("V_o", c_new, a_o);
    for (auto& e : a_o) e = quad_sigmoid(e);
    for (std::size_t k = 0; k < hid; ++k) {
      h[k] = a_o[k] * quad_tanh(c_new[k]);
    }
    c = std::move(c_new);
  }
};

Quad quad_loss(const NetParams& p, const NetConfig& cfg,
               const std::vector<Vector>& inside,
               const std::vector<Vector>& outside, std::size_t label_index,
               LossScheme scheme, std::size_t flat_index, Quad delta) {
  const QuadParams table(p, flat_index, delta);
  const std::size_t T = inside.size();
  const std::size_t hid = cfg.hidden_dim;
  QuadLstmRefs lstm_x{table, "lstm_x."};
  QuadLstmRefs lstm_z{table, "lstm_z."};
  QuadLstmRefs head{table, ""};

  QuadVec hx(hid, 0), cx(hid, 0), hz(hid, 0), cz(hid, 0);
  Quad loss = 0;
  for (std::size_t t = 0; t < T; ++t) {
    QuadVec activation;
    if (cfg.variant == Variant::Fusion) {
      QuadVec x(inside[t].begin(), inside[t].end());
      QuadVec z(outside[t].begin(), outside[t].end());
      lstm_x.step(x, hx, cx);
      lstm_z.step(z, hz, cz);
      QuadVec concat(2 * hid);
      for (std::size_t k = 0; k < hid; ++k) {
        concat[k] = hx[k];
        concat[hid + k] = hz[k];
      }
      activation = head.bias("fusion.b");
      head.matvec_add("fusion.W", concat, activation);
      for (auto& e : activation) e = quad_tanh(e);
    } else {
      QuadVec joint(inside[t].size() + outside[t].size());
      for (std::size_t k = 0; k < inside[t].size(); ++k) {
        joint[k] = static_cast<Quad>(inside[t][k]);
      }
      for (std::size_t k = 0; k < outside[t].size(); ++k) {
        joint[inside[t].size() + k] = static_cast<Quad>(outside[t][k]);
      }
      lstm_x.step(joint, hx, cx);
      activation = hx;
    }
    QuadVec logits = head.bias("output.b");
    head.matvec_add("output.W", activation, logits);
    Quad max_logit = logits[0];
    for (Quad e : logits) {
      if (e > max_logit) max_logit = e;
    }
    Quad denom = 0;
    for (Quad e : logits) denom += quad_exp(e - max_logit);
    const Quad log_p = logits[label_index] - max_logit - quad_log(denom);
    const Quad w = scheme == LossScheme::Exponential
                       ? quad_exp(-static_cast<Quad>(T - 1 - t))
                       : Quad(1);
    loss += -w * log_p;
  }
  return loss;
}

}  // namespace

double reference_loss_derivative(const NetParams& p, const NetConfig& cfg,
                                 const std::vector<Vector>& inside,
                                 const std::vector<Vector>& outside,
                                 std::size_t label_index, LossScheme scheme,
                                 std::size_t flat_index, double step) {
  const Quad h = static_cast<Quad>(step);
  const Quad lp =
      quad_loss(p, cfg, inside, outside, label_index, scheme, flat_index, h);
  const Quad lm =
      quad_loss(p, cfg, inside, outside, label_index, scheme, flat_index, -h);
  return static_cast<double>((lp - lm) / (Quad(2) * h));
}

double reference_loss(const NetParams& p, const NetConfig& cfg,
                      const std::vector<Vector>& inside,
                      const std::vector<Vector>& outside,
                      std::size_t label_index, LossScheme scheme) {
  return static_cast<double>(
      quad_loss(p, cfg, inside, outside, label_index, scheme, SIZE_MAX, 0));
}

std::size_t Model::straight_index() const {
  auto it = std::find(class_names.begin(), class_names.end(), "straight");
  if (it == class_names.end()) {
    throw std::invalid_argument("model class list has no 'straight' class");
  }
  return static_cast<std::size_t>(it - class_names.begin());
}

std::string model_to_json(const Model& m) {
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = {{"variant", to_string(m.config.variant)},
                 {"inside_dim", m.config.inside_dim},
                 {"outside_dim", m.config.outside_dim},
                 {"hidden_dim", m.config.hidden_dim},
                 {"fusion_dim", m.config.fusion_dim},
                 {"num_classes", m.config.num_classes},
                 {"loss_scheme", to_string(m.config.loss_scheme)},
                 {"peephole", to_string(m.config.peephole)}};
  j["class_names"] = m.class_names;
  nlohmann::json params = nlohmann::json::object();
  for (const auto& view : param_views(m.params)) {
    nlohmann::json entry;
    if (view.cols > 0) {
      entry["shape"] = {view.rows, view.cols};
    } else {
      entry["shape"] = {view.rows};
    }
    entry["data"] = std::vector<double>(view.data, view.data + view.size);
    params[view.name] = std::move(entry);
  }
  j["params"] = std::move(params);
  return j.dump();
}

Model model_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint: unsupported format_version");
  }
  Model m;
  const auto& c = j.at("config");
  m.config.variant = variant_from_string(c.at("variant").get<std::string>());
  m.config.inside_dim = c.at("inside_dim").get<std::size_t>();
  m.config.outside_dim = c.at("outside_dim").get<std::size_t>();
  m.config.hidden_dim = c.at("hidden_dim").get<std::size_t>();
  m.config.fusion_dim = c.at("fusion_dim").get<std::size_t>();
  m.config.num_classes = c.at("num_classes").get<std::size_t>();
  m.config.loss_scheme =
      loss_scheme_from_string(c.at("loss_scheme").get<std::string>());
  m.config.peephole = peephole_from_string(c.at("peephole").get<std::string>());
  m.config.validate();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  if (m.class_names.size() != m.config.num_classes) {
    throw std::runtime_error("checkpoint: class_names length " +
                             std::to_string(m.class_names.size()) +
                             " does not match num_classes " +
                             std::to_string(m.config.num_classes));
  }
  m.params = NetParams::zeros(m.config);
  const auto& params = j.at("params");
  for (auto& view : param_views(m.params)) {
    if (!params.contains(view.name)) {
      throw std::runtime_error("checkpoint: missing parameter '" + view.name +
                               "'");
    }
    const auto& entry = params.at(view.name);
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const bool shape_ok =
        view.cols > 0 ? (shape.size() == 2 && shape[0] == view.rows &&
                         shape[1] == view.cols)
                      : (shape.size() == 1 && shape[0] == view.rows);
    if (!shape_ok) {
      throw std::runtime_error("checkpoint: parameter '" + view.name +
                               "' has unexpected shape");
    }
    const auto values = entry.at("data").get<std::vector<double>>();
    if (values.size() != view.size) {
      throw std::runtime_error("checkpoint: parameter '" + view.name +
                               "' has " + std::to_string(values.size()) +
                               " values, expected " + std::to_string(view.size));
    }
    std::copy(values.begin(), values.end(), view.data);
  }
  if (params.size() != param_views(m.params).size()) {
    throw std::runtime_error("checkpoint: unexpected extra parameters");
  }
  return m;
}

void save_model(const Model& m, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << model_to_json(m) << "\n";
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
  }
}

Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return model_from_json(text);
}

}  // namespace seqant
