// Times the OpenMP paths against their serial reference implementations and
// checks that both produce bit-identical results. The parallel units are
// whole sequences/events/parameter entries, so the comparison is apples to
// apples: same arithmetic, same reduction order.

#include <omp.h>

#include <chrono>
#include <cstring>
#include <functional>
#include <iostream>
#include <string>

#include "seqant/dataset.hpp"
#include "seqant/evaluation.hpp"
#include "seqant/network.hpp"
#include "seqant/training.hpp"

using namespace seqant;

namespace {

double time_s(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

bool params_equal(const NetParams& a, const NetParams& b) {
  auto va = param_views(a);
  auto vb = param_views(b);
  if (va.size() != vb.size()) return false;
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i].size != vb[i].size) return false;
    if (std::memcmp(va[i].data, vb[i].data, va[i].size * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

void report(const std::string& name, double serial_s, double parallel_s,
            bool identical) {
  std::cout << name << ": serial " << serial_s << " s, parallel " << parallel_s
            << " s, speedup " << serial_s / parallel_s
            << (identical ? " [bit-identical]" : " [MISMATCH]") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::size_t events_per_class = 40;
  std::size_t hidden = 32;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--quick") {
      events_per_class = 8;
      hidden = 8;
    }
  }

  SyntheticConfig syn;
  syn.events_per_class = events_per_class;
  const Dataset d = generate_synthetic(syn);

  NetConfig cfg;
  cfg.hidden_dim = hidden;
  cfg.fusion_dim = hidden;
  const NetParams params = NetParams::random_init(cfg, 7);
  const Model model{cfg, params, d.class_names};

  std::vector<TrainExample> batch;
  for (const Event& ev : d.events) {
    batch.push_back({&ev, d.label_index(ev.label)});
  }

  std::cout << "threads available: " << omp_get_max_threads() << ", events: "
            << d.events.size() << ", hidden: " << hidden << "\n";

  {
    NetParams serial_grads, parallel_grads;
    const double ts = time_s([&] {
      serial_grads =
          batch_gradients(params, cfg, batch, cfg.loss_scheme, false);
    });
    const double tp = time_s([&] {
      parallel_grads =
          batch_gradients(params, cfg, batch, cfg.loss_scheme, true);
    });
    report("batch gradients", ts, tp, params_equal(serial_grads, parallel_grads));
  }

  {
    std::vector<AnticipationResult> serial_res, parallel_res;
    const double ts =
        time_s([&] { serial_res = anticipate_all(model, d.events, 0.6, false); });
    const double tp =
        time_s([&] { parallel_res = anticipate_all(model, d.events, 0.6, true); });
    bool same = serial_res.size() == parallel_res.size();
    for (std::size_t i = 0; same && i < serial_res.size(); ++i) {
      same = serial_res[i].predicted == parallel_res[i].predicted &&
             serial_res[i].fired_at == parallel_res[i].fired_at &&
             serial_res[i].trace == parallel_res[i].trace;
    }
    report("event evaluation", ts, tp, same);
  }

  {
    NetConfig small = cfg;
    double serial_err = 0.0, parallel_err = 0.0;
    const int max_threads = omp_get_max_threads();
    omp_set_num_threads(1);
    const double ts = time_s([&] { serial_err = gradient_check(small, 3); });
    omp_set_num_threads(max_threads);
    const double tp = time_s([&] { parallel_err = gradient_check(small, 3); });
    report("finite-difference check", ts, tp, serial_err == parallel_err);
  }

  return 0;
}
