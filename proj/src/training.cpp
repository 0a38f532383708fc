#include "seqant/training.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

#include "seqant/manifest.hpp"
#include "seqant/rng.hpp"

namespace seqant {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_dims(const Dataset& d, const NetConfig& cfg) {
  require(d.inside_dim == cfg.inside_dim && d.outside_dim == cfg.outside_dim,
          "dataset dims (" + std::to_string(d.inside_dim) + "," +
              std::to_string(d.outside_dim) + ") do not match net config (" +
              std::to_string(cfg.inside_dim) + "," +
              std::to_string(cfg.outside_dim) + ")");
  require(d.class_names.size() == cfg.num_classes,
          "dataset has " + std::to_string(d.class_names.size()) +
              " classes, net config expects " + std::to_string(cfg.num_classes));
}

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
  require(rmsprop_decay > 0.0 && rmsprop_decay < 1.0,
          "TrainConfig: rmsprop_decay must be in (0,1)");
  require(rmsprop_epsilon >= 0.0, "TrainConfig: rmsprop_epsilon must be >= 0");
  require(augmentation_factor >= 1.0,
          "TrainConfig: augmentation_factor must be >= 1");
  require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(min_subseq_len >= 2, "TrainConfig: min_subseq_len must be >= 2");
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed * 0x100000001b3ULL + tag);
}

Dataset augment(const Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  if (d.events.empty()) throw std::invalid_argument("augment: empty dataset");
  const std::size_t n = d.events.size();
  const std::size_t target = static_cast<std::size_t>(
      std::llround(cfg.augmentation_factor * static_cast<double>(n)));
  std::size_t extras = target > n ? target - n : 0;

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < n; ++i) {
    if (d.events[i].length() >= cfg.min_subseq_len) {
      eligible.push_back(i);
    } else if (extras > 0) {
      std::cerr << "augment: skipping event '" << d.events[i].event_id
                << "' shorter than min_subseq_len=" << cfg.min_subseq_len
                << "\n";
    }
  }

  Dataset out = d;
  if (extras == 0) return out;
  if (eligible.empty()) {
    std::cerr << "augment: no event long enough to draw sub-sequences\n";
    return out;
  }

  Rng rng(derived_seed(cfg.seed, 0xa46));
  for (std::size_t slot = 0; slot < extras; ++slot) {
    const Event& src = d.events[eligible[slot % eligible.size()]];
    const std::size_t T = src.length();
    const std::size_t len_span = T - cfg.min_subseq_len + 1;
    // uniform over all (i,j) with j-i+1 >= min_subseq_len: lengths
    // min_subseq_len..T, length l admitting T-l+1 start positions
    const std::size_t total_pairs = len_span * (len_span + 1) / 2;
    std::size_t r = static_cast<std::size_t>(rng.below(total_pairs));
    std::size_t len = cfg.min_subseq_len;
    std::size_t starts = T - len + 1;
    while (r >= starts) {
      r -= starts;
      ++len;
      starts = T - len + 1;
    }
    Event sub;
    sub.event_id = src.event_id + "#" + std::to_string(slot);
    sub.label = src.label;
    sub.seconds_per_step = src.seconds_per_step;
    sub.inside.assign(src.inside.begin() + static_cast<std::ptrdiff_t>(r),
                      src.inside.begin() + static_cast<std::ptrdiff_t>(r + len));
    sub.outside.assign(src.outside.begin() + static_cast<std::ptrdiff_t>(r),
                       src.outside.begin() + static_cast<std::ptrdiff_t>(r + len));
    out.events.push_back(std::move(sub));
  }
  return out;
}

std::string augmentation_source(const std::string& event_id) {
  const auto pos = event_id.find('#');
  return pos == std::string::npos ? event_id : event_id.substr(0, pos);
}

void rmsprop_update(NetParams& params, const NetParams& grads,
                    RmspropState& state, const TrainConfig& cfg) {
  auto pviews = param_views(params);
  auto gviews = param_views(grads);
  require(pviews.size() == gviews.size(),
          "rmsprop_update: gradient structure does not match parameters");
  std::size_t flat = 0;
  for (std::size_t v = 0; v < pviews.size(); ++v) {
    require(pviews[v].size == gviews[v].size,
            "rmsprop_update: shape mismatch in " + pviews[v].name);
    for (std::size_t k = 0; k < pviews[v].size; ++k, ++flat) {
      const double g = gviews[v].data[k];
      if (!std::isfinite(g)) {
        throw std::runtime_error("rmsprop_update: non-finite gradient in " +
                                 pviews[v].name + "[" + std::to_string(k) + "]");
      }
      double& acc = state.mean_square[flat];
      acc = cfg.rmsprop_decay * acc + (1.0 - cfg.rmsprop_decay) * g * g;
      pviews[v].data[k] -=
          cfg.learning_rate * g / std::sqrt(acc + cfg.rmsprop_epsilon);
    }
  }
  require(flat == state.mean_square.size(),
          "rmsprop_update: state size does not match parameter count");
}

NetParams batch_gradients(const NetParams& params, const NetConfig& cfg,
                          const std::vector<TrainExample>& batch,
                          LossScheme scheme, bool parallel, double* loss_sum) {
  std::vector<NetParams> slots(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  std::exception_ptr error;

#pragma omp parallel for schedule(dynamic) if (parallel && batch.size() > 1)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(batch.size()); ++b) {
    try {
      const Event& ev = *batch[b].event;
      SequenceOutput out = forward(params, cfg, ev.inside, ev.outside, true);
      losses[b] = anticipation_loss(out, batch[b].label, scheme);
      slots[b] = backward_weighted(params, cfg, out, batch[b].label,
                                   loss_time_weights(out.length(), scheme));
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  // fixed-order reduction keeps the sum bit-identical across thread counts
  NetParams total = std::move(slots[0]);
  auto tviews = param_views(total);
  for (std::size_t b = 1; b < slots.size(); ++b) {
    auto sviews = param_views(slots[b]);
    for (std::size_t v = 0; v < tviews.size(); ++v) {
      for (std::size_t k = 0; k < tviews[v].size; ++k) {
        tviews[v].data[k] += sviews[v].data[k];
      }
    }
  }
  if (loss_sum) {
    double s = 0.0;
    for (double l : losses) s += l;
    *loss_sum = s;
  }
  return total;
}

std::string train_history_to_json(const TrainHistory& h) {
  nlohmann::json j;
  j["epochs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < h.epochs.size(); ++i) {
    j["epochs"].push_back({{"epoch", i + 1},
                           {"mean_loss", h.epochs[i].mean_loss},
                           {"wall_time_s", h.epochs[i].wall_time_s}});
  }
  j["final_param_checksum"] = h.final_param_checksum;
  return j.dump(2);
}

std::pair<NetParams, TrainHistory> train(const Dataset& d,
                                         const NetConfig& net_cfg,
                                         const TrainConfig& cfg,
                                         const EpochCallback& on_epoch) {
  cfg.validate();
  net_cfg.validate();
  check_dims(d, net_cfg);
  require(!d.events.empty(), "train: empty dataset");

  std::vector<TrainExample> examples;
  examples.reserve(d.events.size());
  for (const Event& ev : d.events) {
    examples.push_back({&ev, d.label_index(ev.label)});
  }

  NetParams params = NetParams::random_init(net_cfg, cfg.seed);
  RmspropState state = RmspropState::zeros(param_count(params));
  Rng shuffle_rng(derived_seed(cfg.seed, 0x5f));

  TrainHistory history;
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.shuffle) shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
      std::vector<TrainExample> batch;
      for (std::size_t b = pos; b < std::min(pos + cfg.batch_size, order.size());
           ++b) {
        batch.push_back(examples[order[b]]);
      }
      double batch_loss = 0.0;
      NetParams grads;
      try {
        grads = batch_gradients(params, net_cfg, batch, cfg.loss_scheme,
                                cfg.batch_size > 1, &batch_loss);
      } catch (const std::domain_error& e) {
        throw std::runtime_error("training diverged at epoch " +
                                 std::to_string(epoch + 1) + ", sequence '" +
                                 batch.front().event->event_id + "': " + e.what());
      }
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("training diverged (non-finite loss) at epoch " +
                                 std::to_string(epoch + 1) + ", sequence '" +
                                 batch.front().event->event_id + "'");
      }
      epoch_loss += batch_loss;
      rmsprop_update(params, grads, state, cfg);
    }
    const auto t1 = std::chrono::steady_clock::now();
    EpochStats stats;
    stats.mean_loss = epoch_loss / static_cast<double>(examples.size());
    stats.wall_time_s = std::chrono::duration<double>(t1 - t0).count();
    history.epochs.push_back(stats);
    if (on_epoch) on_epoch(epoch + 1, params);
  }

  std::uint64_t checksum = 0xcbf29ce484222325ULL;
  for (const auto& view : param_views(std::as_const(params))) {
    checksum = fnv1a64(view.data, view.size * sizeof(double), checksum);
  }
  history.final_param_checksum = to_hex(checksum);
  return {std::move(params), std::move(history)};
}

GradCheckReport gradient_check_report(const NetConfig& base, std::uint64_t seed,
                                      bool corrupt_gradient) {
  // Small random instance. Init scale and input range are chosen so gate
  // activations stay away from saturation and gradient entries stay well
  // above the finite-difference noise floor.
  Rng dims_rng(derived_seed(seed, 0xd1));
  NetConfig cfg = base;
  cfg.hidden_dim = 2 + dims_rng.below(7);   // <= 8
  cfg.fusion_dim = 2 + dims_rng.below(7);
  cfg.inside_dim = 2 + dims_rng.below(4);
  cfg.outside_dim = 2 + dims_rng.below(3);
  cfg.num_classes = 2 + dims_rng.below(4);
  const std::size_t T = 2 + dims_rng.below(5);  // <= 6

  NetParams params = NetParams::random_init(cfg, derived_seed(seed, 0x11), 0.3);
  Rng input_rng(derived_seed(seed, 0x22));
  std::vector<Vector> inside(T, Vector(cfg.inside_dim));
  std::vector<Vector> outside(T, Vector(cfg.outside_dim));
  for (auto& v : inside) {
    for (double& e : v) e = input_rng.uniform(-1.0, 1.0);
  }
  for (auto& v : outside) {
    for (double& e : v) e = input_rng.uniform(-1.0, 1.0);
  }
  const std::size_t label = input_rng.below(cfg.num_classes);
  const LossScheme scheme = cfg.loss_scheme;

  SequenceOutput out = forward(params, cfg, inside, outside, true);
  NetParams analytic = backward(params, cfg, out, label, scheme);
  auto aviews = param_views(analytic);
  if (corrupt_gradient) aviews[0].data[0] += 1e-3;

  // flat index map
  std::vector<std::pair<std::size_t, std::size_t>> index;  // (view, offset)
  for (std::size_t v = 0; v < aviews.size(); ++v) {
    for (std::size_t k = 0; k < aviews[v].size; ++k) index.emplace_back(v, k);
  }
  std::vector<double> numeric(index.size(), 0.0);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(index.size());
       ++i) {
    const auto flat = static_cast<std::size_t>(i);
    numeric[flat] = reference_loss_derivative(params, cfg, inside, outside,
                                              label, scheme, flat, 1e-6);
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto [v, k] = index[i];
    const double a = aviews[v].data[k];
    const double n = numeric[i];
    const double rel =
        std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-12});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = aviews[v].name;
      report.worst_index = k;
      report.analytic = a;
      report.numeric = n;
    }
  }
  return report;
}

double gradient_check(const NetConfig& base, std::uint64_t seed) {
  return gradient_check_report(base, seed).max_rel_error;
}

}  // namespace seqant
