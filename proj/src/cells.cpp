#include "seqant/cells.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace seqant {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// V c, where V is either hidden x hidden or hidden x 1 (diagonal).
void peephole_add(const Matrix& v, const Vector& c, Vector& out) {
  if (v.cols == 1) {
    for (std::size_t k = 0; k < v.rows; ++k) out[k] += v.data[k] * c[k];
  } else {
    matvec_add(v, c, out);
  }
}

// grad wrt V from upstream `da` at cell value `c`, plus grad wrt c: V^T da.
void peephole_backward(const Matrix& v, const Vector& da, const Vector& c,
                       Matrix& grad_v, Vector& grad_c) {
  if (v.cols == 1) {
    for (std::size_t k = 0; k < v.rows; ++k) {
      grad_v.data[k] += da[k] * c[k];
      grad_c[k] += v.data[k] * da[k];
    }
  } else {
    add_outer(grad_v, da, c);
    matvec_transposed_add(v, da, grad_c);
  }
}

}  // namespace

RnnParams RnnParams::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  RnnParams p;
  p.W = Matrix(hidden_dim, input_dim);
  p.H = Matrix(hidden_dim, hidden_dim);
  p.b = Vector(hidden_dim, 0.0);
  return p;
}

Vector rnn_step(const RnnParams& p, const Vector& x, const Vector& h_prev) {
  require(p.W.cols == x.size(), "rnn_step: W " + shape_str(p.W) +
                                    " incompatible with input length " +
                                    std::to_string(x.size()));
  require(p.H.cols == h_prev.size(), "rnn_step: H " + shape_str(p.H) +
                                         " incompatible with state length " +
                                         std::to_string(h_prev.size()));
  Vector a = p.b;
  matvec_add(p.W, x, a);
  matvec_add(p.H, h_prev, a);
  for (double& e : a) e = std::tanh(e);
  return a;
}

LstmParams LstmParams::zeros(std::size_t input_dim, std::size_t hidden_dim,
                             PeepholeStyle style) {
  const std::size_t pc = style == PeepholeStyle::Full ? hidden_dim : 1;
  LstmParams p;
  p.style = style;
  p.W_i = Matrix(hidden_dim, input_dim);
  p.U_i = Matrix(hidden_dim, hidden_dim);
  p.V_i = Matrix(hidden_dim, pc);
  p.b_i = Vector(hidden_dim, 0.0);
  p.W_f = Matrix(hidden_dim, input_dim);
  p.U_f = Matrix(hidden_dim, hidden_dim);
  p.V_f = Matrix(hidden_dim, pc);
  p.b_f = Vector(hidden_dim, 0.0);
  p.W_c = Matrix(hidden_dim, input_dim);
  p.U_c = Matrix(hidden_dim, hidden_dim);
  p.b_c = Vector(hidden_dim, 0.0);
  p.W_o = Matrix(hidden_dim, input_dim);
  p.U_o = Matrix(hidden_dim, hidden_dim);
  p.V_o = Matrix(hidden_dim, pc);
  p.b_o = Vector(hidden_dim, 0.0);
  return p;
}

LstmState LstmState::zeros(std::size_t hidden_dim) {
  return LstmState{Vector(hidden_dim, 0.0), Vector(hidden_dim, 0.0)};
}

LstmState lstm_step(const LstmParams& p, const Vector& x, const LstmState& prev,
                    LstmStepCache* cache) {
  const std::size_t hid = p.hidden_dim();
  require(x.size() == p.input_dim(),
          "lstm_step: input length " + std::to_string(x.size()) +
              " incompatible with W_i " + shape_str(p.W_i));
  require(prev.h.size() == hid && prev.c.size() == hid,
          "lstm_step: carried state length " + std::to_string(prev.h.size()) +
              "/" + std::to_string(prev.c.size()) + " does not match hidden " +
              std::to_string(hid));

  Vector a_i = p.b_i;
  matvec_add(p.W_i, x, a_i);
  matvec_add(p.U_i, prev.h, a_i);
  peephole_add(p.V_i, prev.c, a_i);
  for (double& e : a_i) e = sigmoid(e);

  Vector a_f = p.b_f;
  matvec_add(p.W_f, x, a_f);
  matvec_add(p.U_f, prev.h, a_f);
  peephole_add(p.V_f, prev.c, a_f);
  for (double& e : a_f) e = sigmoid(e);

  Vector g = p.b_c;
  matvec_add(p.W_c, x, g);
  matvec_add(p.U_c, prev.h, g);
  for (double& e : g) e = std::tanh(e);

  Vector c(hid);
  for (std::size_t k = 0; k < hid; ++k) c[k] = a_f[k] * prev.c[k] + a_i[k] * g[k];

  Vector a_o = p.b_o;
  matvec_add(p.W_o, x, a_o);
  matvec_add(p.U_o, prev.h, a_o);
  peephole_add(p.V_o, c, a_o);  // output gate reads the new cell
  for (double& e : a_o) e = sigmoid(e);

  Vector h(hid);
  for (std::size_t k = 0; k < hid; ++k) h[k] = a_o[k] * std::tanh(c[k]);

  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->i = std::move(a_i);
    cache->f = std::move(a_f);
    cache->g = std::move(g);
    cache->o = std::move(a_o);
    cache->c = c;
    cache->h = h;
  }
  return LstmState{std::move(h), std::move(c)};
}

LstmStepBackwardResult lstm_step_backward(const LstmParams& p,
                                          const LstmStepCache& cache,
                                          const Vector& grad_h,
                                          const Vector& grad_c,
                                          LstmParams& grad) {
  if (!cache.valid()) {
    throw std::invalid_argument("lstm_step_backward: missing step cache");
  }
  const std::size_t hid = p.hidden_dim();
  require(grad_h.size() == hid && grad_c.size() == hid,
          "lstm_step_backward: upstream gradient length does not match hidden " +
              std::to_string(hid));

  // Output gate first: its peephole feeds back into the cell gradient.
  Vector da_o(hid);
  for (std::size_t k = 0; k < hid; ++k) {
    const double tc = std::tanh(cache.c[k]);
    da_o[k] = grad_h[k] * tc * cache.o[k] * (1.0 - cache.o[k]);
  }

  Vector dc = grad_c;
  for (std::size_t k = 0; k < hid; ++k) {
    const double tc = std::tanh(cache.c[k]);
    dc[k] += grad_h[k] * cache.o[k] * (1.0 - tc * tc);
  }
  peephole_backward(p.V_o, da_o, cache.c, grad.V_o, dc);

  Vector da_i(hid), da_f(hid), da_g(hid);
  for (std::size_t k = 0; k < hid; ++k) {
    da_i[k] = dc[k] * cache.g[k] * cache.i[k] * (1.0 - cache.i[k]);
    da_f[k] = dc[k] * cache.c_prev[k] * cache.f[k] * (1.0 - cache.f[k]);
    da_g[k] = dc[k] * cache.i[k] * (1.0 - cache.g[k] * cache.g[k]);
  }

  LstmStepBackwardResult res;
  res.grad_x = Vector(p.input_dim(), 0.0);
  res.grad_prev_h = Vector(hid, 0.0);
  res.grad_prev_c = Vector(hid, 0.0);

  for (std::size_t k = 0; k < hid; ++k) res.grad_prev_c[k] = dc[k] * cache.f[k];

  add_outer(grad.W_i, da_i, cache.x);
  add_outer(grad.U_i, da_i, cache.h_prev);
  peephole_backward(p.V_i, da_i, cache.c_prev, grad.V_i, res.grad_prev_c);
  axpy(1.0, da_i, grad.b_i);

  add_outer(grad.W_f, da_f, cache.x);
  add_outer(grad.U_f, da_f, cache.h_prev);
  peephole_backward(p.V_f, da_f, cache.c_prev, grad.V_f, res.grad_prev_c);
  axpy(1.0, da_f, grad.b_f);

  add_outer(grad.W_c, da_g, cache.x);
  add_outer(grad.U_c, da_g, cache.h_prev);
  axpy(1.0, da_g, grad.b_c);

  add_outer(grad.W_o, da_o, cache.x);
  add_outer(grad.U_o, da_o, cache.h_prev);
  axpy(1.0, da_o, grad.b_o);

  matvec_transposed_add(p.W_i, da_i, res.grad_x);
  matvec_transposed_add(p.W_f, da_f, res.grad_x);
  matvec_transposed_add(p.W_c, da_g, res.grad_x);
  matvec_transposed_add(p.W_o, da_o, res.grad_x);

  matvec_transposed_add(p.U_i, da_i, res.grad_prev_h);
  matvec_transposed_add(p.U_f, da_f, res.grad_prev_h);
  matvec_transposed_add(p.U_c, da_g, res.grad_prev_h);
  matvec_transposed_add(p.U_o, da_o, res.grad_prev_h);

  return res;
}

}  // namespace seqant
