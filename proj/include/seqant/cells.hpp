#pragma once

#include <cstddef>

#include "seqant/linalg.hpp"

namespace seqant {

/// Peephole weights are full hidden x hidden matrices by default; the
/// diagonal style (the commoner LSTM variant) stores them as hidden x 1
/// and applies them element-wise.
enum class PeepholeStyle { Full, Diagonal };

/// Plain tanh recurrence: h_t = tanh(W x_t + H h_{t-1} + b). Kept as an
/// ablation baseline next to the LSTM cells.
struct RnnParams {
  Matrix W;  // hidden x input
  Matrix H;  // hidden x hidden
  Vector b;  // hidden

  static RnnParams zeros(std::size_t input_dim, std::size_t hidden_dim);
};

Vector rnn_step(const RnnParams& p, const Vector& x, const Vector& h_prev);

/// Gated cell with peephole connections. Gate g in {i, f, c, o} carries
/// W_g (hidden x input), U_g (hidden x hidden) and b_g; the candidate
/// ("c" gate) has no peephole, the other three read the cell state.
struct LstmParams {
  PeepholeStyle style = PeepholeStyle::Full;
  Matrix W_i, U_i, V_i;
  Vector b_i;
  Matrix W_f, U_f, V_f;
  Vector b_f;
  Matrix W_c, U_c;
  Vector b_c;
  Matrix W_o, U_o, V_o;
  Vector b_o;

  std::size_t input_dim() const { return W_i.cols; }
  std::size_t hidden_dim() const { return W_i.rows; }

  static LstmParams zeros(std::size_t input_dim, std::size_t hidden_dim,
                          PeepholeStyle style = PeepholeStyle::Full);
};

struct LstmState {
  Vector h;
  Vector c;

  static LstmState zeros(std::size_t hidden_dim);
};

/// Activations recorded by a training-mode step; everything the backward
/// pass needs to differentiate one step without recomputation.
struct LstmStepCache {
  Vector x, h_prev, c_prev;
  Vector i, f, g, o;  // gate activations and tanh candidate
  Vector c, h;        // new cell and hidden

  bool valid() const { return !h.empty(); }
};

/// One forward step of the gated cell. Order of evaluation: input and
/// forget gates read c_{t-1}, the cell updates, then the output gate reads
/// the new c_t. Pass a cache pointer to record activations for backward.
LstmState lstm_step(const LstmParams& p, const Vector& x, const LstmState& prev,
                    LstmStepCache* cache = nullptr);

struct LstmStepBackwardResult {
  Vector grad_x;
  Vector grad_prev_h;
  Vector grad_prev_c;
};

/// Accumulates parameter gradients into `grad` (same shapes as `p`) and
/// returns the gradients flowing to the step inputs. `grad_h`/`grad_c` are
/// the upstream derivatives w.r.t. h_t and c_t.
LstmStepBackwardResult lstm_step_backward(const LstmParams& p,
                                          const LstmStepCache& cache,
                                          const Vector& grad_h,
                                          const Vector& grad_c,
                                          LstmParams& grad);

}  // namespace seqant
