#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqant/cells.hpp"
#include "seqant/linalg.hpp"

namespace seqant {

/// Fusion: one recurrent stack per sensory stream, combined through a
/// learned fusion layer. Simple: both streams concatenated into a single
/// stack with the softmax head directly on its hidden state.
enum class Variant { Fusion, Simple };

/// Exponential: per-step weight e^{-(T-t)}, so late mistakes cost more.
/// Uniform: plain per-step cross entropy.
enum class LossScheme { Exponential, Uniform };

std::string to_string(Variant v);
std::string to_string(LossScheme s);
std::string to_string(PeepholeStyle s);
Variant variant_from_string(const std::string& s);
LossScheme loss_scheme_from_string(const std::string& s);
PeepholeStyle peephole_from_string(const std::string& s);

struct NetConfig {
  Variant variant = Variant::Fusion;
  std::size_t inside_dim = 12;
  std::size_t outside_dim = 6;
  std::size_t hidden_dim = 64;
  std::size_t fusion_dim = 64;  // ignored by the simple variant
  std::size_t num_classes = 5;
  LossScheme loss_scheme = LossScheme::Exponential;
  PeepholeStyle peephole = PeepholeStyle::Full;

  void validate() const;  // throws std::invalid_argument
};

struct NetParams {
  LstmParams lstm_x;  // fusion: inside stream; simple: the concatenated stream
  LstmParams lstm_z;  // fusion only
  Matrix fusion_w;    // fusion_dim x 2*hidden, fusion only
  Vector fusion_b;
  Matrix out_w;  // num_classes x fusion_dim (fusion) or x hidden (simple)
  Vector out_b;

  static NetParams zeros(const NetConfig& cfg);
  static NetParams random_init(const NetConfig& cfg, std::uint64_t seed,
                               double scale = 0.08);
};

/// Flat view of one named parameter block, in the canonical order shared by
/// initialization, the optimizer state, and the checkpoint format.
struct ParamView {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;  // 0 for bias vectors
  double* data = nullptr;
  std::size_t size = 0;
};

struct ConstParamView {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  const double* data = nullptr;
  std::size_t size = 0;
};

std::vector<ParamView> param_views(NetParams& p);
std::vector<ConstParamView> param_views(const NetParams& p);
std::size_t param_count(const NetParams& p);

/// Per-step activations recorded in training mode.
struct StepCaches {
  LstmStepCache x_step;
  LstmStepCache z_step;  // fusion only
  Vector concat;         // fusion: [h^x; h^z]
  Vector e;              // fusion activation
};

struct SequenceOutput {
  std::vector<Vector> y_seq;       // one probability vector per step
  std::vector<StepCaches> caches;  // empty unless run in training mode

  std::size_t length() const { return y_seq.size(); }
  bool has_caches() const { return !caches.empty(); }
};

/// Carried recurrent state for incremental (streaming) evaluation.
struct StreamState {
  LstmState x;
  LstmState z;
};

StreamState init_stream_state(const NetConfig& cfg);

/// Advances the carried state by one observation pair and returns y_t.
/// This is the single step used by both full-sequence and streaming paths,
/// so the two are bit-identical by construction.
Vector forward_step(const NetParams& p, const NetConfig& cfg, const Vector& x_t,
                    const Vector& z_t, StreamState& state,
                    StepCaches* cache = nullptr);

/// Full-sequence forward from zero initial state. Both streams must have
/// equal length T >= 1. Enable `training` to retain caches for backward.
SequenceOutput forward(const NetParams& p, const NetConfig& cfg,
                       const std::vector<Vector>& inside,
                       const std::vector<Vector>& outside,
                       bool training = false);

/// w_t = e^{-(T-t)} (exponential) or 1 (uniform), for t = 1..T.
std::vector<double> loss_time_weights(std::size_t T, LossScheme scheme);

/// Sum over t of -w_t * ln(y_t[label]). Per-sequence; batch reduction is
/// the caller's job.
double anticipation_loss(const SequenceOutput& out, std::size_t label_index,
                         LossScheme scheme);

/// Gradients of the weighted loss w.r.t. every parameter; `weights` has one
/// entry per step.
NetParams backward_weighted(const NetParams& p, const NetConfig& cfg,
                            const SequenceOutput& out, std::size_t label_index,
                            const std::vector<double>& weights);

NetParams backward(const NetParams& p, const NetConfig& cfg,
                   const SequenceOutput& out, std::size_t label_index,
                   LossScheme scheme);

/// Central-difference derivative of the loss w.r.t. one parameter entry
/// (canonical flat order), with the whole forward pass re-evaluated in
/// quad precision. This second, independent arithmetic route keeps the
/// difference quotient at step 1e-6 far above rounding noise even for
/// structurally tiny gradient entries.
double reference_loss_derivative(const NetParams& p, const NetConfig& cfg,
                                 const std::vector<Vector>& inside,
                                 const std::vector<Vector>& outside,
                                 std::size_t label_index, LossScheme scheme,
                                 std::size_t flat_index, double step);

/// Unperturbed quad-precision loss value from the same reference path.
double reference_loss(const NetParams& p, const NetConfig& cfg,
                      const std::vector<Vector>& inside,
                      const std::vector<Vector>& outside,
                      std::size_t label_index, LossScheme scheme);

/// A trained network plus the class ordering it was trained with.
struct Model {
  NetConfig config;
  NetParams params;
  std::vector<std::string> class_names;

  std::size_t straight_index() const;  // throws if "straight" is absent
};

inline constexpr int kCheckpointFormatVersion = 1;

std::string model_to_json(const Model& m);
Model model_from_json(const std::string& text);
void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

}  // namespace seqant
