#include "selfdet/plm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace selfdet {

double score_candidate(const LatentModel& model, const FeatureVector& v) {
  double s = model.bias;
  const size_t n = std::min(model.weights.size(), v.values.size());
  for (size_t i = 0; i < n; ++i) s += model.weights[i] * v.values[i];
  return s;
}

LatentChoice infer_latent(const LatentModel& model, const TrainingInstance& instance) {
  if (instance.candidates.empty()) throw EmptyCandidates();
  LatentChoice best;
  best.index = 0;
  best.score = score_candidate(model, instance.candidates[0]);
  for (size_t j = 1; j < instance.candidates.size(); ++j) {
    const double s = score_candidate(model, instance.candidates[j]);
    if (s > best.score) {
      best.score = s;
      best.index = static_cast<int>(j);
    }
  }
  best.label = best.score > 0.0 ? 1 : 0;
  return best;
}

double dc_loss(const LatentModel& model, const TrainingInstance& instance) {
  if (instance.candidates.empty()) throw EmptyCandidates();
  double smax = -std::numeric_limits<double>::infinity();
  for (const auto& v : instance.candidates)
    smax = std::max(smax, score_candidate(model, v));
  // label-0 features are the zero vector: its score is exactly 0
  if (instance.label == 1)
    return std::max(smax, 1.0) - smax; // y=0 branch carries Delta=1
  return std::max(smax + 1.0, 0.0);    // minus max_h of the zero map (=0)
}

double objective_Fl(const LatentModel& model,
                    const std::vector<TrainingInstance>& instances, double C) {
  double reg = 0.0;
  for (double w : model.weights) reg += w * w; // bias excluded
  double loss = 0.0;
  for (const auto& inst : instances) loss += inst.weight * dc_loss(model, inst);
  return 0.5 * reg + C * loss;
}

HardNegativeSet mine_hard_negatives(const std::vector<Proposal>& frame_proposals,
                                    const Proposal& anchor, const LatentModel& model,
                                    const Frame& frame, int K) {
  struct Scored {
    Proposal p;
    double score;
    int order;
  };
  std::vector<Scored> cands;
  int order = 0;

  auto consider = [&](const BBox& box, ProposalSource source) {
    const double v = iou(anchor.box, box);
    if (v <= 0.0 || v >= 0.25) return;
    Proposal p;
    p.box = box;
    p.frame_index = anchor.frame_index;
    p.source = source;
    cands.push_back({p, 0.0, order++});
  };

  for (const auto& fp : frame_proposals) consider(fp.box, fp.source);

  // Half-scale sub-windows of the anchor ("object parts"): centers on a 3x3
  // grid over the anchor. Border-straddling ones land in (0, 0.25).
  const BBox& a = anchor.box;
  for (int iy = 0; iy < 3; ++iy) {
    for (int ix = 0; ix < 3; ++ix) {
      BBox sub;
      sub.w = a.w * 0.5;
      sub.h = a.h * 0.5;
      sub.x = a.x + a.w * (ix * 0.5) - sub.w * 0.5;
      sub.y = a.y + a.h * (iy * 0.5) - sub.h * 0.5;
      sub = sub.clamp_to(frame.size());
      consider(sub, ProposalSource::sliding_window);
    }
  }

  HogParams hp;
  hp.window_w = model.window_w;
  hp.window_h = model.window_h;
#pragma omp parallel for schedule(dynamic, 4)
  for (long long i = 0; i < static_cast<long long>(cands.size()); ++i)
    cands[i].score = score_candidate(model, extract_features(frame, cands[i].p.box, hp));

  std::stable_sort(cands.begin(), cands.end(), [](const Scored& x, const Scored& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.order < y.order;
  });

  HardNegativeSet out;
  out.anchor = anchor;
  for (const auto& c : cands) {
    if (static_cast<int>(out.neighbors.size()) >= K) break;
    Proposal p = c.p;
    p.detection_score = c.score;
    out.neighbors.push_back(p);
  }
  return out;
}

double spatial_reg_Fs(const LatentModel& model, const std::vector<FeaturePair>& pairs) {
  double total = 0.0;
  for (const auto& [vh, vhp] : pairs) {
    if (vh.values.size() != vhp.values.size() ||
        vh.values.size() != model.weights.size())
      throw DimensionMismatch("feature pair dimension mismatch");
    double dot = 0.0;
    for (size_t i = 0; i < vh.values.size(); ++i)
      dot += model.weights[i] * (vh.values[i] - vhp.values[i]);
    total += dot * dot;
  }
  return total;
}

namespace {

// Internal augmented view: w has D feature coordinates plus a bias slot.
struct Aug {
  std::vector<double> w; // size D+1

  double score(const FeatureVector& v) const {
    double s = w.back();
    for (size_t i = 0; i < v.values.size(); ++i) s += w[i] * v.values[i];
    return s;
  }
};

LatentModel to_model(const Aug& a, const CccpParams& p, int iteration) {
  LatentModel m;
  m.weights.assign(a.w.begin(), a.w.end() - 1);
  m.bias = a.w.back();
  m.window_w = p.window_w;
  m.window_h = p.window_h;
  m.training_iteration = iteration;
  return m;
}

// Convexified inner objective at fixed latents and fixed F_s linearization:
//   J(w) = 0.5*||w_nb||^2 + C*sum_i weight_i*[max(smax_i + d1, d0) - own_i]
//          - lambda * g_s . w
// own_i = score of the imputed latent for positives, 0 for negatives.
struct InnerProblem {
  const std::vector<TrainingInstance>* instances;
  std::vector<int> imputed;       // argmax candidate per instance (positives)
  std::vector<double> fs_grad;    // 2*sum (w_t . d) d, augmented with 0 bias slot
  double C = 1.0;
  double lambda = 0.0;

  // Evaluates J and the subgradient in one pass. Candidate scoring (the
  // dominant cost) is parallel with per-instance slot writes; accumulation
  // stays serial in instance order so results are bit-reproducible.
  double eval(const Aug& a, std::vector<double>& grad) const {
    const size_t dim = a.w.size();
    grad.assign(dim, 0.0);
    for (size_t i = 0; i + 1 < dim; ++i) grad[i] = a.w[i];
    double obj = 0.0;
    for (size_t i = 0; i + 1 < dim; ++i) obj += a.w[i] * a.w[i];
    obj *= 0.5;

    const size_t num = instances->size();
    std::vector<double> smax_of(num);
    std::vector<int> amax_of(num);
    std::vector<double> own_of(num);
#pragma omp parallel for schedule(dynamic, 8)
    for (long long n = 0; n < static_cast<long long>(num); ++n) {
      const auto& inst = (*instances)[n];
      double smax = -std::numeric_limits<double>::infinity();
      int amax = 0;
      for (size_t j = 0; j < inst.candidates.size(); ++j) {
        const double s = a.score(inst.candidates[j]);
        if (s > smax) {
          smax = s;
          amax = static_cast<int>(j);
        }
      }
      smax_of[n] = smax;
      amax_of[n] = amax;
      own_of[n] = inst.label == 1 ? a.score(inst.candidates[imputed[n]]) : 0.0;
    }

    for (size_t n = 0; n < num; ++n) {
      const auto& inst = (*instances)[n];
      const double smax = smax_of[n];
      const int amax = amax_of[n];
      const double cw = C * inst.weight;
      if (inst.label == 1) {
        // max(smax, 1) - score(imputed)
        const auto& own = inst.candidates[imputed[n]];
        const double own_s = own_of[n];
        if (smax >= 1.0) {
          obj += cw * (smax - own_s);
          const auto& win = inst.candidates[amax];
          for (size_t i = 0; i < win.values.size(); ++i)
            grad[i] += cw * (win.values[i] - own.values[i]);
          grad[dim - 1] += cw * (1.0 - 1.0);
        } else {
          obj += cw * (1.0 - own_s);
          for (size_t i = 0; i < own.values.size(); ++i)
            grad[i] -= cw * own.values[i];
          grad[dim - 1] -= cw;
        }
      } else {
        // max(smax + 1, 0); the subtracted zero-map max is constant 0
        if (smax + 1.0 >= 0.0) {
          obj += cw * (smax + 1.0);
          const auto& win = inst.candidates[amax];
          for (size_t i = 0; i < win.values.size(); ++i)
            grad[i] += cw * win.values[i];
          grad[dim - 1] += cw;
        }
      }
    }

    for (size_t i = 0; i < dim; ++i) {
      obj -= lambda * fs_grad[i] * a.w[i];
      grad[i] -= lambda * fs_grad[i];
    }
    return obj;
  }
};

double full_dc_objective(const Aug& a, const std::vector<TrainingInstance>& instances,
                         const std::vector<FeaturePair>& pairs, double C, double lambda,
                         const CccpParams& p) {
  LatentModel m = to_model(a, p, 0);
  double obj = objective_Fl(m, instances, C);
  if (lambda > 0.0 && !pairs.empty()) obj -= lambda * spatial_reg_Fs(m, pairs);
  return obj;
}

} // namespace

CccpResult cccp_train(const std::vector<TrainingInstance>& instances,
                      const std::vector<FeaturePair>& hard_pairs,
                      const CccpParams& params) {
  bool has_pos = false, has_neg = false;
  size_t dim = 0;
  for (const auto& inst : instances) {
    if (inst.candidates.empty()) throw EmptyCandidates();
    dim = std::max(dim, inst.candidates[0].values.size());
    (inst.label == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos) throw NoPositives();
  if (!has_neg) throw NoNegatives();

  Aug a;
  a.w.assign(dim + 1, 0.0);
  if (params.warm_start && params.warm_start->weights.size() == dim) {
    std::copy(params.warm_start->weights.begin(), params.warm_start->weights.end(),
              a.w.begin());
    a.w.back() = params.warm_start->bias;
  }

  double lambda = hard_pairs.empty() ? 0.0 : params.lambda;
  int halvings = 0;

  CccpResult result;
  double prev_obj = full_dc_objective(a, instances, hard_pairs, params.C, lambda, params);
  result.objective_history.push_back(prev_obj);

  for (int outer = 0; outer < params.max_outer; ++outer) {
    InnerProblem ip;
    ip.instances = &instances;
    ip.C = params.C;
    ip.lambda = lambda;

    // latent imputation under the current model
    ip.imputed.resize(instances.size(), 0);
    {
      LatentModel m = to_model(a, params, outer);
      for (size_t n = 0; n < instances.size(); ++n)
        if (instances[n].label == 1)
          ip.imputed[n] = infer_latent(m, instances[n]).index;
    }

    // F_s linearized at the current weights
    ip.fs_grad.assign(dim + 1, 0.0);
    for (const auto& [vh, vhp] : hard_pairs) {
      double dot = 0.0;
      for (size_t i = 0; i < vh.values.size(); ++i)
        dot += a.w[i] * (vh.values[i] - vhp.values[i]);
      for (size_t i = 0; i < vh.values.size(); ++i)
        ip.fs_grad[i] += 2.0 * dot * (vh.values[i] - vhp.values[i]);
    }

    // Deterministic full-batch subgradient descent, best-iterate kept.
    // Steps are gradient-normalized (w moves ~step_scale/sqrt(t) in
    // parameter space) so the schedule is insensitive to the loss-sum
    // magnitude, which grows with the training-set size.
    Aug cur = a;
    Aug best = a;
    std::vector<double> grad;
    double best_obj = ip.eval(cur, grad);
    constexpr double kStepScale = 0.5;
    for (int t = 1; t <= params.inner_steps; ++t) {
      double gnorm = 0.0;
      for (double g : grad) gnorm += g * g;
      gnorm = std::sqrt(gnorm);
      if (gnorm < params.grad_tol) break;
      const double step = kStepScale / (gnorm * std::sqrt(static_cast<double>(t)));
      for (size_t i = 0; i < cur.w.size(); ++i) cur.w[i] -= step * grad[i];
      const double obj = ip.eval(cur, grad);
      if (!std::isfinite(obj)) throw NonFiniteObjective();
      if (obj < best_obj) {
        best_obj = obj;
        best = cur;
      }
    }

    const double new_obj =
        full_dc_objective(best, instances, hard_pairs, params.C, lambda, params);
    if (!std::isfinite(new_obj) || new_obj < -1e12) {
      // linearized -lambda*F_s drove the iterates off a cliff: halve and redo
      lambda *= 0.5;
      ++halvings;
      if (halvings > 30) throw NonFiniteObjective();
      continue;
    }
    if (new_obj <= prev_obj) {
      a = best;
      result.objective_history.push_back(new_obj);
      const double denom = std::max(1.0, std::abs(prev_obj));
      const bool converged = (prev_obj - new_obj) / denom < params.rel_tol;
      prev_obj = new_obj;
      if (converged) break;
    } else {
      // inner solve could not improve the surrogate: keep the incumbent
      break;
    }
  }

  result.model = to_model(a, params, 0);
  result.lambda_used = lambda;
  result.lambda_halvings = halvings;
  return result;
}

} // namespace selfdet
