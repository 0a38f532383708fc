#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seqant/dataset.hpp"
#include "seqant/network.hpp"

namespace seqant {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  std::uint64_t seed = 1;
  double augmentation_factor = 3.214;  // mirrors the 700 -> 2250 event ratio
  std::size_t min_subseq_len = 5;
  LossScheme loss_scheme = LossScheme::Exponential;
  bool shuffle = true;

  void validate() const;
};

/// Stable seed derivation so per-fold / per-purpose RNG streams never
/// depend on execution order.
std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag);

/// Adds redundant contiguous sub-sequences (same label, aligned windows)
/// until the dataset reaches round(factor * N) events. Sub-sequence ids are
/// "<source_id>#<n>"; events shorter than min_subseq_len are skipped with a
/// warning on stderr.
Dataset augment(const Dataset& d, const TrainConfig& cfg);

/// Source event id for an augmented sub-event (prefix before '#'), or the
/// id itself for originals.
std::string augmentation_source(const std::string& event_id);

struct RmspropState {
  std::vector<double> mean_square;  // aligned with the canonical param order

  static RmspropState zeros(std::size_t n) { return {std::vector<double>(n, 0.0)}; }
};

/// Per entry: acc <- rho*acc + (1-rho)*g^2; theta <- theta - lr*g/sqrt(acc+eps).
void rmsprop_update(NetParams& params, const NetParams& grads,
                    RmspropState& state, const TrainConfig& cfg);

struct TrainExample {
  const Event* event = nullptr;
  std::size_t label = 0;
};

/// Summed loss gradients over a batch. Per-example gradients go into
/// indexed slots (in parallel when asked) and are reduced in index order,
/// so the result is bit-identical with and without threads.
NetParams batch_gradients(const NetParams& params, const NetConfig& cfg,
                          const std::vector<TrainExample>& batch,
                          LossScheme scheme, bool parallel,
                          double* loss_sum = nullptr);

struct EpochStats {
  double mean_loss = 0.0;
  double wall_time_s = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::string final_param_checksum;
};

std::string train_history_to_json(const TrainHistory& h);

/// Optional per-epoch hook (checkpointing); called after each epoch.
using EpochCallback =
    std::function<void(std::size_t epoch, const NetParams& params)>;

/// Seeded uniform init in [-0.08, 0.08], shuffled epochs, per-sequence BPTT
/// with RMSprop updates. Fully deterministic for a fixed seed. Aborts with
/// epoch/sequence context if the loss goes non-finite.
std::pair<NetParams, TrainHistory> train(const Dataset& d,
                                         const NetConfig& net_cfg,
                                         const TrainConfig& cfg,
                                         const EpochCallback& on_epoch = {});

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares analytic BPTT gradients against central finite differences
/// (step 1e-6) on a small random net (hidden <= 8, T <= 6) drawn from
/// `seed`; variant/loss/peephole are taken from `base`. `corrupt_gradient`
/// deliberately breaks one analytic entry (harness self-check).
GradCheckReport gradient_check_report(const NetConfig& base, std::uint64_t seed,
                                      bool corrupt_gradient = false);

/// Worst relative error |a - n| / max(|a|, |n|, 1e-12) over all parameters.
double gradient_check(const NetConfig& base, std::uint64_t seed);

}  // namespace seqant
