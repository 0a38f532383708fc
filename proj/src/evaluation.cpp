#include "seqant/evaluation.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace seqant {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

AnticipationResult result_from_trace(const std::string& event_id,
                                     std::vector<Vector> trace,
                                     double seconds_per_step,
                                     std::size_t straight_index, double p_th) {
  AnticipationResult res;
  res.event_id = event_id;
  const FiringDecision fire = scan_trace(trace, straight_index, p_th);
  res.predicted = fire.predicted;
  if (fire.fired_at) {
    const std::size_t t = *fire.fired_at;
    res.fired_at = t;
    res.t_before_steps = trace.size() - t;
    res.t_before_seconds =
        static_cast<double>(trace.size() - t) * seconds_per_step;
  }
  res.trace = std::move(trace);
  return res;
}

std::vector<std::size_t> truth_indices(const Model& model,
                                       const std::vector<Event>& events) {
  std::vector<std::size_t> truths;
  truths.reserve(events.size());
  for (const Event& ev : events) {
    auto it = std::find(model.class_names.begin(), model.class_names.end(),
                        ev.label);
    require(it != model.class_names.end(),
            "event '" + ev.event_id + "' has label '" + ev.label +
                "' unknown to the model");
    truths.push_back(static_cast<std::size_t>(it - model.class_names.begin()));
  }
  return truths;
}

}  // namespace

FiringDecision scan_trace(const std::vector<Vector>& trace,
                          std::size_t straight_index, double p_th) {
  require(p_th > 0.0 && p_th <= 1.0,
          "p_th must be in (0,1], got " + std::to_string(p_th));
  FiringDecision decision;
  decision.predicted = straight_index;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const Vector& y = trace[t];
    const std::size_t m = static_cast<std::size_t>(
        std::max_element(y.begin(), y.end()) - y.begin());
    if (m != straight_index && y[m] > p_th) {
      decision.predicted = m;
      decision.fired_at = t + 1;
      break;
    }
  }
  return decision;
}

AnticipationResult anticipate(const Model& model, const Event& event,
                              double p_th) {
  require(p_th > 0.0 && p_th <= 1.0,
          "p_th must be in (0,1], got " + std::to_string(p_th));
  const std::size_t T = event.length();
  require(T >= 1, "anticipate: event '" + event.event_id + "' has no steps");
  std::vector<Vector> trace;
  trace.reserve(T);
  StreamState state = init_stream_state(model.config);
  for (std::size_t t = 0; t < T; ++t) {
    trace.push_back(forward_step(model.params, model.config, event.inside[t],
                                 event.outside[t], state));
  }
  return result_from_trace(event.event_id, std::move(trace),
                           event.seconds_per_step, model.straight_index(), p_th);
}

std::vector<AnticipationResult> anticipate_all(const Model& model,
                                               const std::vector<Event>& events,
                                               double p_th, bool parallel) {
  std::vector<AnticipationResult> results(events.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) if (parallel && events.size() > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(events.size());
       ++i) {
    try {
      results[static_cast<std::size_t>(i)] =
          anticipate(model, events[static_cast<std::size_t>(i)], p_th);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return results;
}

std::vector<std::vector<std::size_t>> confusion_matrix(
    const std::vector<AnticipationResult>& results,
    const std::vector<std::size_t>& truths, std::size_t num_classes) {
  require(results.size() == truths.size(),
          "confusion_matrix: " + std::to_string(results.size()) +
              " results vs " + std::to_string(truths.size()) + " truths");
  std::vector<std::vector<std::size_t>> m(
      num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < results.size(); ++i) {
    m[results[i].predicted][truths[i]] += 1;
  }
  return m;
}

MetricsReport compute_metrics(const std::vector<AnticipationResult>& results,
                              const std::vector<std::size_t>& truths,
                              const std::vector<std::string>& class_names,
                              double p_th) {
  require(results.size() == truths.size(),
          "compute_metrics: " + std::to_string(results.size()) +
              " results vs " + std::to_string(truths.size()) + " truths");
  const std::size_t K = class_names.size();
  auto straight_it = std::find(class_names.begin(), class_names.end(), "straight");
  require(straight_it != class_names.end(),
          "compute_metrics: class list has no 'straight'");
  const std::size_t straight =
      static_cast<std::size_t>(straight_it - class_names.begin());

  MetricsReport rep;
  rep.p_th = p_th;
  rep.num_events = results.size();
  rep.class_names = class_names;
  rep.per_class.resize(K);
  for (std::size_t i = 0; i < results.size(); ++i) {
    require(truths[i] < K && results[i].predicted < K,
            "compute_metrics: class index out of range");
    rep.per_class[truths[i]].actual += 1;
    rep.per_class[results[i].predicted].predicted += 1;
    if (results[i].predicted == truths[i]) {
      rep.per_class[truths[i]].true_positives += 1;
    }
    if (results[i].fired_at && results[i].predicted == truths[i] &&
        results[i].predicted != straight) {
      rep.mean_time_to_maneuver_s += *results[i].t_before_seconds;
      rep.ttm_count += 1;
    }
  }
  rep.mean_time_to_maneuver_s =
      rep.ttm_count > 0
          ? rep.mean_time_to_maneuver_s / static_cast<double>(rep.ttm_count)
          : 0.0;

  // straight is excluded: it is the default answer, not an anticipation
  double pr = 0.0, re = 0.0;
  for (std::size_t m = 0; m < K; ++m) {
    if (m == straight) continue;
    const ClassTally& tally = rep.per_class[m];
    if (tally.predicted > 0) {
      pr += static_cast<double>(tally.true_positives) /
            static_cast<double>(tally.predicted);
    }
    if (tally.actual > 0) {
      re += static_cast<double>(tally.true_positives) /
            static_cast<double>(tally.actual);
    }
  }
  const double denom = static_cast<double>(K - 1);
  rep.precision = pr / denom;
  rep.recall = re / denom;
  rep.f1 = rep.precision + rep.recall > 0.0
               ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
               : 0.0;
  rep.confusion = confusion_matrix(results, truths, K);
  return rep;
}

std::string confusion_table(const MetricsReport& report, bool normalized) {
  const std::size_t K = report.class_names.size();
  std::size_t width = 9;
  for (const auto& name : report.class_names) {
    width = std::max(width, name.size() + 2);
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "pred\\actual";
  for (const auto& name : report.class_names) {
    os << std::right << std::setw(static_cast<int>(width)) << name;
  }
  os << "\n";
  for (std::size_t r = 0; r < K; ++r) {
    os << std::left << std::setw(static_cast<int>(width)) << report.class_names[r];
    std::size_t row_sum = 0;
    for (std::size_t c = 0; c < K; ++c) row_sum += report.confusion[r][c];
    for (std::size_t c = 0; c < K; ++c) {
      if (normalized) {
        const double v = row_sum > 0 ? static_cast<double>(report.confusion[r][c]) /
                                           static_cast<double>(row_sum)
                                     : 0.0;
        os << std::right << std::setw(static_cast<int>(width)) << std::fixed
           << std::setprecision(3) << v;
      } else {
        os << std::right << std::setw(static_cast<int>(width))
           << report.confusion[r][c];
      }
    }
    os << "\n";
  }
  return os.str();
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["p_th"] = report.p_th;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f1"] = report.f1;
  j["mean_time_to_maneuver_s"] = report.mean_time_to_maneuver_s;
  j["ttm_count"] = report.ttm_count;
  j["num_events"] = report.num_events;
  j["class_names"] = report.class_names;
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t m = 0; m < report.class_names.size(); ++m) {
    per_class[report.class_names[m]] = {
        {"true_positives", report.per_class[m].true_positives},
        {"predicted", report.per_class[m].predicted},
        {"actual", report.per_class[m].actual}};
  }
  j["per_class"] = std::move(per_class);
  j["confusion"] = report.confusion;
  return j.dump(2);
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 20; ++i) grid.push_back(0.05 * i);
  return grid;
}

SweepResult threshold_sweep(const Model& model, const std::vector<Event>& events,
                            const std::vector<double>& grid, bool parallel) {
  require(!grid.empty(), "threshold_sweep: empty grid");
  for (double g : grid) {
    require(g > 0.0 && g <= 1.0,
            "threshold_sweep: grid value " + std::to_string(g) +
                " outside (0,1]");
  }
  require(!events.empty(), "threshold_sweep: no events");
  const std::vector<std::size_t> truths = truth_indices(model, events);
  const std::size_t straight = model.straight_index();

  // traces do not depend on the threshold: compute them once
  std::vector<AnticipationResult> base = anticipate_all(model, events, 1.0,
                                                        parallel);

  auto evaluate_at = [&](double p_th) {
    std::vector<AnticipationResult> rethresholded;
    rethresholded.reserve(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      rethresholded.push_back(result_from_trace(
          base[i].event_id, base[i].trace, events[i].seconds_per_step, straight,
          p_th));
    }
    return compute_metrics(rethresholded, truths, model.class_names, p_th);
  };

  SweepResult sweep;
  for (double p_th : grid) {
    const MetricsReport rep = evaluate_at(p_th);
    sweep.points.push_back(
        {p_th, rep.f1, rep.precision, rep.recall, rep.mean_time_to_maneuver_s});
  }

  // argmax F1 independent of grid order; ties go to the larger (more
  // conservative) threshold
  std::vector<SweepPoint> sorted = sweep.points;
  std::sort(sorted.begin(), sorted.end(),
            [](const SweepPoint& a, const SweepPoint& b) { return a.p_th < b.p_th; });
  sweep.best_p_th = sorted.front().p_th;
  double best_f1 = sorted.front().f1;
  for (const SweepPoint& pt : sorted) {
    if (pt.f1 >= best_f1) {
      best_f1 = pt.f1;
      sweep.best_p_th = pt.p_th;
    }
  }
  return sweep;
}

std::string sweep_to_csv(const SweepResult& sweep) {
  std::ostringstream os;
  os << "p_th,f1,precision,recall,mean_ttm_s\n";
  for (const SweepPoint& pt : sweep.points) {
    os << pt.p_th << "," << pt.f1 << "," << pt.precision << "," << pt.recall
       << "," << pt.mean_ttm_s << "\n";
  }
  return os.str();
}

double standard_error(const std::vector<double>& values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  return std::sqrt(var) / std::sqrt(static_cast<double>(n));
}

namespace {

CvAggregate aggregate(const std::vector<double>& values) {
  CvAggregate agg;
  for (double v : values) agg.mean += v;
  agg.mean /= static_cast<double>(values.size());
  agg.std_error = standard_error(values);
  return agg;
}

}  // namespace

std::string cv_report_to_json(const CvReport& report) {
  nlohmann::json j;
  j["k"] = report.k;
  j["folds"] = nlohmann::json::array();
  for (std::size_t f = 0; f < report.folds.size(); ++f) {
    nlohmann::json fold = nlohmann::json::parse(metrics_to_json(report.folds[f]));
    fold["fold"] = f;
    fold["selected_p_th"] = report.fold_thresholds[f];
    j["folds"].push_back(std::move(fold));
  }
  auto agg = [](const CvAggregate& a) {
    return nlohmann::json{{"mean", a.mean}, {"std_error", a.std_error}};
  };
  j["precision"] = agg(report.precision);
  j["recall"] = agg(report.recall);
  j["f1"] = agg(report.f1);
  j["time_to_maneuver_s"] = agg(report.time_to_maneuver);
  return j.dump(2);
}

FoldOutcome run_fold(const Dataset& d, const NetConfig& net_cfg,
                     const TrainConfig& train_cfg, const FoldSplit& split,
                     std::size_t fold, const std::vector<double>& grid) {
  Dataset train_d;
  train_d.inside_dim = d.inside_dim;
  train_d.outside_dim = d.outside_dim;
  train_d.class_names = d.class_names;
  std::vector<Event> test_events;
  for (const Event& ev : d.events) {
    if (split.fold_of(ev.event_id) == fold) {
      test_events.push_back(ev);
    } else {
      train_d.events.push_back(ev);
    }
  }
  require(!train_d.events.empty() && !test_events.empty(),
          "run_fold: fold " + std::to_string(fold) + " leaves an empty split");

  TrainConfig fold_cfg = train_cfg;
  fold_cfg.seed = derived_seed(train_cfg.seed, 0xf01d + fold);

  // augmentation strictly after the split, training side only
  const std::vector<Event> train_originals = train_d.events;
  const Dataset augmented = augment(train_d, fold_cfg);
  auto [params, history] = train(augmented, net_cfg, fold_cfg);

  Model model{net_cfg, std::move(params), d.class_names};
  const SweepResult sweep = threshold_sweep(model, train_originals, grid, false);

  const std::vector<AnticipationResult> results =
      anticipate_all(model, test_events, sweep.best_p_th, false);
  std::vector<std::size_t> truths;
  truths.reserve(test_events.size());
  for (const Event& ev : test_events) truths.push_back(d.label_index(ev.label));

  FoldOutcome outcome;
  outcome.selected_p_th = sweep.best_p_th;
  outcome.metrics =
      compute_metrics(results, truths, d.class_names, sweep.best_p_th);
  return outcome;
}

CvReport cross_validate(const Dataset& d, const NetConfig& net_cfg,
                        const TrainConfig& train_cfg, std::size_t k,
                        const std::vector<double>& grid, std::size_t jobs) {
  require(k >= 2, "cross_validate: k must be >= 2");
  const FoldSplit split = kfold_split(d, k, derived_seed(train_cfg.seed, 0x5b11));

  std::vector<FoldOutcome> outcomes(k);
  std::vector<std::string> errors(k);
#pragma omp parallel for schedule(dynamic) num_threads(static_cast<int>(jobs)) \
    if (jobs > 1)
  for (std::ptrdiff_t f = 0; f < static_cast<std::ptrdiff_t>(k); ++f) {
    try {
      outcomes[static_cast<std::size_t>(f)] =
          run_fold(d, net_cfg, train_cfg, split, static_cast<std::size_t>(f),
                   grid);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(f)] = e.what();
    }
  }
  for (std::size_t f = 0; f < k; ++f) {
    if (!errors[f].empty()) {
      throw std::runtime_error("cross_validate: fold " + std::to_string(f) +
                               " failed: " + errors[f]);
    }
  }

  CvReport report;
  report.k = k;
  std::vector<double> pr, re, f1, ttm;
  for (std::size_t f = 0; f < k; ++f) {
    report.folds.push_back(outcomes[f].metrics);
    report.fold_thresholds.push_back(outcomes[f].selected_p_th);
    pr.push_back(outcomes[f].metrics.precision);
    re.push_back(outcomes[f].metrics.recall);
    f1.push_back(outcomes[f].metrics.f1);
    ttm.push_back(outcomes[f].metrics.mean_time_to_maneuver_s);
  }
  report.precision = aggregate(pr);
  report.recall = aggregate(re);
  report.f1 = aggregate(f1);
  report.time_to_maneuver = aggregate(ttm);
  return report;
}

}  // namespace seqant
