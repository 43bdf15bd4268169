#include "selfdet/pipeline.hpp"

#include "selfdet/propagation.hpp"
#include "selfdet/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <cstdio>
#include <cstdlib>
#include <set>

namespace selfdet {

int LearnState::count_positives() const {
  int n = 0;
  for (const auto& s : labeled) n += s.label == 1 ? 1 : 0;
  return n;
}
int LearnState::count_negatives() const {
  return static_cast<int>(labeled.size()) - count_positives();
}

namespace {

struct Context {
  const FrameSequence& video;
  const FrameSequence& negs;
  const PipelineConfig& cfg;
  std::vector<MotionMap> maps;
  std::vector<EdgeMap> edges;
  HogParams hog;
};

FeatureVector features_of(const Context& ctx, const Proposal& p) {
  return extract_features(ctx.video[p.frame_index], p.box, ctx.hog);
}

// Negative-image instances are fixed for the whole run: random windows per
// image, geometry drawn once from the run seed.
struct NegativePool {
  std::vector<TrainingInstance> instances;
  std::vector<PoolSample> samples; // one per window, for error-rate tracking
};

NegativePool make_negative_pool(const Context& ctx) {
  NegativePool pool;
  Rng rng(ctx.cfg.seed * 2654435761ull + 0xdead);
  const auto& scales = ctx.cfg.pp.scales;
  int image_id = 0;
  for (const auto& img : ctx.negs) {
    TrainingInstance inst;
    inst.image_id = 1000000 + image_id;
    inst.label = 0;
    std::vector<BBox> boxes;
    for (int k = 0; k < ctx.cfg.negative_windows_per_image; ++k) {
      const double h = scales[rng.uniform_int(0, static_cast<int>(scales.size()) - 1)];
      const double w = h * 0.5;
      if (w > img.width || h > img.height) continue;
      BBox b{rng.uniform(0.0, img.width - w), rng.uniform(0.0, img.height - h), w, h};
      boxes.push_back(b);
    }
    // Structured negatives: the windows with the densest edge content.
    // Random windows mostly land on smooth texture; these land on whatever
    // real structure (clutter, non-target objects) the image contains, with
    // overlap suppression so several distinct structures are covered.
    {
      const EdgeMap em = edge_map(img);
      auto mean_edge_in = [&](const BBox& b) {
        const PixelRect r = rasterize(b, {img.width, img.height});
        double s = 0.0;
        for (int y = r.y0; y < r.y1; ++y)
          for (int x = r.x0; x < r.x1; ++x) s += em.at(x, y);
        return s / (static_cast<double>(r.width()) * r.height());
      };
      std::vector<std::pair<double, BBox>> scored;
      for (double h : scales) {
        const double w = h * 0.5;
        if (w > img.width || h > img.height) continue;
        const double sx = std::max(1.0, w * 0.5), sy = std::max(1.0, h * 0.5);
        for (double y = 0.0; y + h <= img.height + 1e-9; y += sy)
          for (double x = 0.0; x + w <= img.width + 1e-9; x += sx)
            scored.push_back({mean_edge_in({x, y, w, h}), BBox{x, y, w, h}});
      }
      std::stable_sort(scored.begin(), scored.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      const int structured = std::max(4, ctx.cfg.negative_windows_per_image / 2);
      std::vector<BBox> kept;
      for (const auto& [s, b] : scored) {
        if (static_cast<int>(kept.size()) >= structured) break;
        bool dup = false;
        for (const auto& q : kept)
          if (iou(b, q) > 0.5) {
            dup = true;
            break;
          }
        if (!dup) kept.push_back(b);
      }
      for (const auto& b : kept) boxes.push_back(b);
    }
    auto feats = extract_batch(img, boxes, ctx.hog);
    for (size_t k = 0; k < feats.size(); ++k) {
      inst.candidates.push_back(feats[k]);
      PoolSample s;
      s.proposal.box = boxes[k];
      s.proposal.frame_index = img.index;
      s.features = std::move(feats[k]);
      s.label = 0;
      s.provenance = Provenance::negative_image;
      s.from_negative_image = true;
      pool.samples.push_back(std::move(s));
    }
    if (!inst.candidates.empty()) pool.instances.push_back(std::move(inst));
    ++image_id;
  }
  return pool;
}

// Per-frame proposals plus temporal extension by tracking.
std::vector<std::vector<Proposal>> proposals_for_iteration(const Context& ctx,
                                                           const ProposalParams& pp,
                                                           const LatentModel* model) {
  const int n = static_cast<int>(ctx.video.size());
  std::vector<std::vector<Proposal>> props(n);
  for (int f = 0; f < n; ++f)
    props[f] = generate_proposals(ctx.video[f], ctx.maps[f], ctx.edges[f], pp, model);

  // temporal extension of the top-ranked seeds
  int track_id = 0;
  for (int f = 0; f < n; ++f) {
    const int seeds = std::min<int>(ctx.cfg.track_seeds_per_frame,
                                    static_cast<int>(props[f].size()));
    for (int s = 0; s < seeds; ++s) {
      Proposal seed = props[f][s];
      seed.track_id = track_id++;
      auto tracked = track_proposals(ctx.video, seed, ctx.cfg.hp.tau, &ctx.maps,
                                     &ctx.edges, pp.border_margin_fraction);
      for (size_t k = 1; k < tracked.size(); ++k) {
        const auto& t = tracked[k];
        if (t.motion_score < pp.bg_threshold) continue; // motion gate holds for all
        props[t.frame_index].push_back(t);
      }
    }
  }
  return props;
}

std::vector<Proposal> flatten_and_normalize(const Context& ctx,
                                            std::vector<std::vector<Proposal>>& props) {
  std::vector<Proposal> all;
  for (auto& fp : props)
    for (auto& p : fp) all.push_back(p);
  if (all.empty()) throw NoProposalsSurvived();
  all = normalize_aspect(all, ctx.video[0].size());
  for (auto& fp : props) fp.clear();
  for (const auto& p : all) props[p.frame_index].push_back(p);
  return all;
}

double model_score(const LatentModel& model, const FeatureVector& v) {
  return score_candidate(model, v);
}

double labeled_error_rate(const LatentModel& model, const std::vector<PoolSample>& labeled) {
  if (labeled.empty()) return 0.0;
  std::vector<ScoredSample> scored;
  scored.reserve(labeled.size());
  for (const auto& s : labeled)
    scored.push_back({model_score(model, s.features), static_cast<double>(s.label)});
  return estimate_error_rate(scored);
}

// Re-mines hard negatives for every discovered positive; returns the
// regularization pairs and the negative samples, capped at 10x positives.
struct HardNegatives {
  std::vector<FeaturePair> pairs;
  std::vector<PoolSample> samples;
};

HardNegatives mine_all_hard_negatives(const Context& ctx,
                                      const std::vector<std::vector<Proposal>>& props,
                                      const std::vector<PoolSample>& labeled,
                                      const LatentModel& model, int iteration) {
  HardNegatives out;
  int num_pos = 0;
  for (const auto& s : labeled) num_pos += s.label == 1 ? 1 : 0;
  const size_t cap = std::min<size_t>(static_cast<size_t>(10) * std::max(1, num_pos),
                                      static_cast<size_t>(ctx.cfg.max_hard_negatives));

  for (const auto& s : labeled) {
    if (s.label != 1 || s.from_negative_image) continue;
    const int f = s.proposal.frame_index;
    const auto hn = mine_hard_negatives(props[f], s.proposal, model, ctx.video[f],
                                        ctx.cfg.hard_negative_K);
    const FeatureVector anchor_feat = s.features;
    for (const auto& nb : hn.neighbors) {
      if (out.samples.size() >= cap) break;
      PoolSample ns;
      ns.proposal = nb;
      ns.features = features_of(ctx, nb);
      ns.label = 0;
      ns.provenance = Provenance::hard_negative;
      ns.iteration = iteration;
      out.pairs.push_back({anchor_feat, ns.features});
      // A neighbor with real overlap still shows a large part of the object;
      // calling it an absolute negative contradicts the positive label and
      // the conflict compresses every margin a little more each time it is
      // re-mined. Such windows only enter the relative (pair) constraint;
      // windows with marginal overlap also train as label-0 samples.
      if (iou(s.proposal.box, nb.box) <= 0.05) out.samples.push_back(std::move(ns));
    }
  }

  // Bootstrap negatives: whatever the current model fires on inside the
  // object-free images becomes an explicit negative. The fixed random pool
  // covers the images too sparsely to stop the model from inventing a
  // "positive" appearance out of background structure it has never seen
  // labeled; scanning with the live detector closes exactly those gaps.
  for (const auto& img : ctx.negs) {
    const auto dets = detect(model, img, ctx.cfg.pp, /*threshold=*/-1.0,
                             ctx.cfg.hp.nms_iou);
    int used = 0;
    for (const auto& d : dets) {
      if (used >= ctx.cfg.bootstrap_negatives_per_image) break;
      bool dup = false;
      for (const auto& s : labeled)
        if (s.from_negative_image && s.proposal.frame_index == img.index &&
            iou(s.proposal.box, d.box) > 0.7) {
          dup = true;
          break;
        }
      if (dup) continue;
      PoolSample ns;
      ns.proposal.box = d.box;
      ns.proposal.frame_index = img.index;
      ns.proposal.detection_score = d.score;
      ns.features = extract_features(img, d.box, ctx.hog);
      ns.label = 0;
      ns.provenance = Provenance::hard_negative;
      ns.from_negative_image = true;
      ns.iteration = iteration;
      out.samples.push_back(std::move(ns));
      ++used;
    }
  }

  // The contrast reward is concave; left at raw scale its curvature
  // (lambda * sum ||v_h - v_h'||^2) can exceed the margin term's 1/2 ||beta||^2
  // and the objective becomes unbounded below. Rescaling each difference to a
  // unit direction and averaging over the set keeps it subordinate for
  // lambda < 0.5 while preserving the contrast directions.
  if (!out.pairs.empty()) {
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(out.pairs.size()));
    for (auto& [vh, vhp] : out.pairs) {
      double norm2 = 0.0;
      for (size_t i = 0; i < vh.values.size(); ++i) {
        const double d = vh.values[i] - vhp.values[i];
        norm2 += d * d;
      }
      const double scale = norm2 > 0.0 ? inv_sqrt_n / std::sqrt(norm2) : 0.0;
      for (size_t i = 0; i < vh.values.size(); ++i) {
        vh.values[i] = (vh.values[i] - vhp.values[i]) * scale;
        vhp.values[i] = 0.0;
      }
    }
  }
  return out;
}

struct InstanceSet {
  std::vector<TrainingInstance> instances;
  // per-frame positive instance index, for latent re-discovery
  std::map<int, int> positive_frame_to_instance;
  // candidate windows per positive frame, aligned with instance candidates
  std::map<int, std::vector<Proposal>> frame_candidates;
};

// Positive frames contribute multi-candidate instances (latent windows);
// everything else contributes y=0 instances.
InstanceSet build_instances(const Context& ctx, const std::vector<Proposal>& pos_band,
                            const std::vector<Proposal>& neg_band,
                            const NegativePool& negpool,
                            const std::vector<PoolSample>& extra_samples) {
  InstanceSet set;
  std::map<int, std::vector<Proposal>> by_frame;
  for (const auto& p : pos_band) by_frame[p.frame_index].push_back(p);

  for (auto& [frame, ps] : by_frame) {
    // Greedy overlap suppression keeps the candidate list diverse: without
    // it the whole budget can collapse onto near-duplicates of one spot and
    // the true object never enters the latent choice set.
    std::vector<Proposal> kept;
    for (const auto& p : ps) {
      if (static_cast<int>(kept.size()) >= ctx.cfg.max_candidates_per_frame) break;
      bool dup = false;
      for (const auto& q : kept)
        if (iou(p.box, q.box) > 0.5) {
          dup = true;
          break;
        }
      if (!dup) kept.push_back(p);
    }
    // Offer each kept location at every scale (same center) so the latent
    // choice can correct a badly-sized seed; the ranked grid often only
    // contains one scale per spot after suppression.
    std::vector<Proposal> expanded;
    const FrameSize fs = ctx.video[frame].size();
    const MotionMap& mmap = ctx.maps[frame];
    const EdgeMap& emap = ctx.edges[frame];
    const auto prior = [](const Proposal& q) {
      return 0.5 * q.motion_score + 0.5 * q.objectness_score;
    };
    for (const auto& p : kept) {
      expanded.push_back(p);
      const double cx = p.box.x + p.box.w / 2.0, cy = p.box.y + p.box.h / 2.0;
      // Use the configured aspects, not the proposal's own: a box clamped at
      // the frame border has a distorted aspect that would otherwise leak
      // into every scale variant.
      for (int h : ctx.cfg.pp.scales) {
        for (double aspect : ctx.cfg.pp.aspects) {
          const double w = h * aspect;
          if (w > fs.width || h > fs.height) continue;
          Proposal v = p;
          v.box = BBox{cx - w / 2.0, cy - h / 2.0, w, static_cast<double>(h)}.clamp_to(fs);
          // Re-score the variant; only offer it if it does not degrade the
          // seed's motion/objectness support. Without this check the latent
          // choice is free to drift onto oversized windows (typically
          // border-clamped ones) that pad the object with background.
          v.motion_score = motion_fit(mmap, v.box, 0.25, &emap);
          v.objectness_score = objectness_score(emap, v.box, ctx.cfg.pp.border_margin_fraction);
          if (prior(v) < 0.9 * prior(p)) continue;
          bool dup = false;
          for (const auto& q : expanded)
            if (iou(v.box, q.box) > 0.9) {
              dup = true;
              break;
            }
          if (!dup) expanded.push_back(v);
        }
      }
    }
    // Drop candidates whose motion support is far below the frame's best:
    // the latent choice (and with it the whole training loop) is otherwise
    // free to settle on a consistently off-center crop, which the detector
    // then reproduces at test time.
    double best_motion = 0.0;
    for (const auto& p : expanded) best_motion = std::max(best_motion, p.motion_score);
    if (best_motion > 0.0) {
      std::vector<Proposal> tight;
      for (const auto& p : expanded)
        if (p.motion_score >= 0.5 * best_motion) tight.push_back(p);
      expanded = std::move(tight);
    }
    ps = expanded;
    TrainingInstance inst;
    inst.image_id = frame;
    inst.label = 1;
    std::vector<BBox> boxes;
    for (const auto& p : ps) boxes.push_back(p.box);
    auto feats = extract_batch(ctx.video[frame], boxes, ctx.hog);
    inst.candidates = std::move(feats);
    set.positive_frame_to_instance[frame] = static_cast<int>(set.instances.size());
    set.frame_candidates[frame] = ps;
    set.instances.push_back(std::move(inst));
  }

  for (const auto& inst : negpool.instances) set.instances.push_back(inst);

  // low-ranked video proposals as plain negatives (capped)
  constexpr int kMaxVideoNegatives = 100;
  int used = 0;
  for (const auto& p : neg_band) {
    if (used >= kMaxVideoNegatives) break;
    TrainingInstance inst;
    inst.image_id = 2000000 + used;
    inst.label = 0;
    inst.candidates.push_back(features_of(ctx, p));
    set.instances.push_back(std::move(inst));
    ++used;
  }

  // previously labeled / propagated / hard-negative samples
  for (const auto& s : extra_samples) {
    TrainingInstance inst;
    inst.image_id = 3000000 + static_cast<int>(set.instances.size());
    inst.label = s.label;
    inst.candidates.push_back(s.features);
    inst.weight = s.label == 1 ? std::max(0.05, s.soft_score)
                               : std::max(0.05, 1.0 - s.soft_score);
    set.instances.push_back(std::move(inst));
  }
  return set;
}

} // namespace

LearnState self_learn(const FrameSequence& video, const FrameSequence& negative_images,
                      const PipelineConfig& cfg) {
  if (video.size() < 20 || negative_images.size() < 5) throw InsufficientFrames();
  cfg.hp.validate();

  Context ctx{video, negative_images, cfg, {}, {}, {}};
  ctx.maps = motion_maps(video);
  ctx.edges.reserve(video.size());
  for (const auto& f : video) ctx.edges.push_back(edge_map(f));

  NegativePool negpool = make_negative_pool(ctx);

  LearnState state;
  state.alpha.alpha = {0.0, 0.5, 0.5}; // f_beta undefined in iteration 1
  std::map<int, int> discovered_frame_to_sample; // frame -> index in state.labeled
  std::vector<FeaturePair> hard_pairs;

  for (int iter = 1; iter <= cfg.hp.max_iterations; ++iter) {
    const bool first = iter == 1;
    state.iteration = iter;

    // Snapshot of everything the iteration mutates. If the retrained model
    // regresses on the labeled error rate, the whole iteration is rolled
    // back and learning stops at the last stable state: the loop is
    // deterministic, so re-running the rejected step would reproduce it.
    const auto snap_labeled = state.labeled;
    const auto snap_model = state.model;
    const auto snap_alpha = state.alpha;
    const auto snap_pairs = hard_pairs;
    const auto snap_discovered = discovered_frame_to_sample;

    ProposalParams pp = cfg.pp;
    if (!first && cfg.recompute_aspect) {
      // Median over positives that do not touch the frame border: clamped
      // boxes have distorted shapes and a mean would let one of them skew
      // every window in the next round.
      std::vector<double> aspects;
      for (const auto& s : state.labeled)
        if (s.label == 1) {
          const BBox& b = s.proposal.box;
          const FrameSize fs = ctx.video[s.proposal.frame_index].size();
          if (b.x <= 0.5 || b.y <= 0.5 || b.x + b.w >= fs.width - 0.5 ||
              b.y + b.h >= fs.height - 0.5)
            continue;
          aspects.push_back(b.aspect());
        }
      if (!aspects.empty()) {
        std::nth_element(aspects.begin(), aspects.begin() + aspects.size() / 2, aspects.end());
        pp.aspects = {aspects[aspects.size() / 2]};
      }
    }

    auto props = proposals_for_iteration(ctx, pp, first ? nullptr : &state.model);
    auto all = flatten_and_normalize(ctx, props);

    // ranking weights: zero-space regression from the second iteration
    if (!first) {
      std::vector<std::pair<double, std::array<double, 3>>> scored;
      for (const auto& p : all) {
        std::array<double, 3> t = {logistic(p.detection_score), p.motion_score,
                                   p.objectness_score};
        scored.push_back({combinatorial_score(state.alpha, p, true), t});
      }
      std::stable_sort(scored.begin(), scored.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      scored.resize(scored.size() / 2); // top half feeds the update
      std::vector<std::array<double, 3>> triplets;
      for (const auto& [s, t] : scored) triplets.push_back(t);
      if (triplets.size() >= 3) state.alpha = update_rank_weights(triplets);
    }

    RankSplit split = rank_and_split(all, state.alpha, cfg.pos_quantile, cfg.neg_quantile,
                                     /*use_detection=*/!first);
    // The bottom band must not contain windows sitting on an object we have
    // already labeled positive: once the ranking includes the detection
    // score, a window the current model underrates can fall into the band
    // even though it overlaps a real object, and training it as a negative
    // collapses the positive margins.
    {
      std::map<int, std::vector<const BBox*>> pos_boxes;
      for (const auto& s : state.labeled)
        if (s.label == 1 && !s.from_negative_image)
          pos_boxes[s.proposal.frame_index].push_back(&s.proposal.box);
      std::erase_if(split.negatives, [&](const Proposal& p) {
        auto it = pos_boxes.find(p.frame_index);
        if (it == pos_boxes.end()) return false;
        for (const BBox* b : it->second)
          if (iou(*b, p.box) > 0.3) return true;
        return false;
      });
    }

    // The global band decides which frames count as positive; the latent
    // candidates of each such frame come from the frame's own ranking so a
    // frame with weaker absolute scores still offers its best windows.
    std::vector<Proposal> frame_cands;
    {
      std::set<int> pos_frames;
      for (const auto& p : split.positives) pos_frames.insert(p.frame_index);
      for (int f : pos_frames) {
        std::vector<Proposal> fp = props[f];
        // In the first iteration the candidate order doubles as the latent
        // initialization (an untrained model ties every window, and ties
        // resolve to index 0). Motion is the only cue whose score peaks on
        // the tight box -- the contour-based cue rewards windows padded
        // with background -- so it alone picks the seed window.
        std::stable_sort(fp.begin(), fp.end(), [&](const Proposal& a, const Proposal& b) {
          if (first) return a.motion_score > b.motion_score;
          return combinatorial_score(state.alpha, a, true) >
                 combinatorial_score(state.alpha, b, true);
        });
        if (static_cast<int>(fp.size()) > 4 * cfg.max_candidates_per_frame)
          fp.resize(4 * cfg.max_candidates_per_frame);
        for (auto& p : fp) frame_cands.push_back(std::move(p));
      }
    }

    // label propagation with the gamma controller (from the second iteration)
    double gamma_used = 0.0;
    double xi_u = 0.0;
    std::vector<PoolSample> accepted;
    if (!first && !state.labeled.empty()) {
      // unlabeled pool: high-ranked proposals not overlapping a labeled
      // positive, deduplicated per frame so one object contributes one
      // window rather than a stack of near-identical ones
      std::vector<Proposal> pool;
      for (const auto& p : split.positives) {
        bool taken = false;
        for (const auto& s : state.labeled) {
          if (s.label == 1 && !s.from_negative_image &&
              s.proposal.frame_index == p.frame_index && iou(s.proposal.box, p.box) > 0.5) {
            taken = true;
            break;
          }
        }
        for (const auto& q : pool) {
          if (taken) break;
          if (q.frame_index == p.frame_index && iou(q.box, p.box) > 0.5) taken = true;
        }
        if (!taken) pool.push_back(p);
        if (static_cast<int>(pool.size()) >= cfg.max_unlabeled_pool) break;
      }

      if (!pool.empty()) {
        std::vector<FeatureVector> feats;
        std::vector<double> labels;
        for (const auto& s : state.labeled) {
          feats.push_back(s.features);
          labels.push_back(s.label);
        }
        const int l = static_cast<int>(feats.size());
        for (const auto& p : pool) feats.push_back(features_of(ctx, p));
        SampleGraph graph = build_graph(feats, l, cfg.hp.k_nn);
        PropagationResult prop = propagate(graph, labels);

        std::vector<FeatureVector> pool_feats(feats.begin() + l, feats.end());
        InstanceSet base = build_instances(ctx, frame_cands, split.negatives, negpool,
                                           state.labeled);
        const LatentModel incumbent = state.model;

        auto trainer = [&](const std::vector<NewLabel>& news) {
          auto instances = base.instances;
          for (const auto& nl : news) {
            TrainingInstance inst;
            inst.label = nl.label;
            inst.candidates.push_back(pool_feats[nl.pool_index]);
            inst.weight = nl.label == 1 ? std::max(0.05, nl.soft_score)
                                        : std::max(0.05, 1.0 - nl.soft_score);
            instances.push_back(std::move(inst));
          }
          CccpParams cp;
          cp.C = cfg.hp.C;
          cp.lambda = cfg.hp.lambda;
          cp.inner_steps = cfg.provisional_inner_steps;
          cp.max_outer = 3;
          cp.rel_tol = 1e-4;
          cp.window_w = ctx.hog.window_w;
          cp.window_h = ctx.hog.window_h;
          cp.warm_start = &incumbent;
          LatentModel prov;
          try {
            prov = cccp_train(instances, hard_pairs, cp).model;
          } catch (const DataError&) {
            prov = incumbent;
          }
          GammaEvaluation ev;
          for (const auto& s : state.labeled)
            ev.existing.push_back({model_score(prov, s.features),
                                   static_cast<double>(s.label)});
          for (const auto& nl : news)
            ev.new_raw_scores.push_back(model_score(prov, pool_feats[nl.pool_index]));
          return ev;
        };

        ErrorRateEstimate est = gamma_line_search(prop, l, cfg.hp.r, cfg.hp.gamma_max, trainer);
        gamma_used = est.gamma;
        xi_u = est.xi_u;
        for (const auto& nl : labels_for_gamma(prop, l, cfg.hp.r, est.gamma)) {
          PoolSample s;
          s.proposal = pool[nl.pool_index];
          s.features = pool_feats[nl.pool_index];
          s.label = nl.label;
          s.provenance = Provenance::propagated;
          s.iteration = iter;
          s.soft_score = nl.soft_score;
          accepted.push_back(std::move(s));
        }
      }
    }
    for (auto& s : accepted) state.labeled.push_back(std::move(s));
    state.gamma_history.push_back(gamma_used);

    // object discovery + enforcement retrain
    std::vector<PoolSample> extra;
    for (const auto& s : state.labeled)
      if (s.provenance == Provenance::propagated ||
          (s.provenance == Provenance::hard_negative && !std::getenv("SELFDET_NO_HN")))
        extra.push_back(s);
    InstanceSet set = build_instances(ctx, frame_cands, split.negatives, negpool, extra);

    CccpParams cp;
    cp.C = cfg.hp.C;
    cp.lambda = first ? 0.0 : cfg.hp.lambda; // pairs exist only after discovery
    cp.inner_steps = cfg.cccp_inner_steps;
    cp.rel_tol = 1e-4; // full 1e-6 polish is not worth it mid-pipeline
    cp.max_outer = 6;
    cp.window_w = ctx.hog.window_w;
    cp.window_h = ctx.hog.window_h;
    if (!first) cp.warm_start = &state.model;
    if (std::getenv("SELFDET_DEBUG_XI")) {
      std::vector<PoolSample> pos;
      for (const auto& s : state.labeled)
        if (s.label == 1) pos.push_back(s);
      std::fprintf(stderr, "  iter %d pre-discovery pos_err=%.4f (n=%zu)\n", iter,
                   labeled_error_rate(state.model, pos), pos.size());
    }
    CccpResult discovery = cccp_train(set.instances, first ? std::vector<FeaturePair>{} : hard_pairs, cp);
    state.model = discovery.model;
    state.model.training_iteration = iter;
    if (std::getenv("SELFDET_DEBUG_XI")) {
      std::vector<PoolSample> pos;
      for (const auto& s : state.labeled)
        if (s.label == 1) pos.push_back(s);
      std::fprintf(stderr, "  iter %d post-discovery pos_err=%.4f (n=%zu outer=%zu)\n", iter,
                   labeled_error_rate(state.model, pos), pos.size(),
                   discovery.objective_history.size());
    }

    // discovered positives: one window per positive frame (re-localized each
    // iteration; count never decreases)
    for (const auto& [frame, idx] : set.positive_frame_to_instance) {
      const LatentChoice choice = infer_latent(state.model, set.instances[idx]);
      // A frame whose best window still scores negative has no credible
      // object (e.g. every real candidate was suppressed); skip it rather
      // than force a bogus positive. Previously discovered frames keep
      // their last credible window.
      if (choice.score <= 0.0) continue;
      Proposal p = set.frame_candidates[frame][choice.index];
      p.detection_score = choice.score;
      PoolSample s;
      s.proposal = p;
      s.features = set.instances[idx].candidates[choice.index];
      s.label = 1;
      s.provenance = Provenance::discovered;
      s.iteration = iter;
      s.soft_score = 1.0;
      auto it = discovered_frame_to_sample.find(frame);
      if (it == discovered_frame_to_sample.end()) {
        discovered_frame_to_sample[frame] = static_cast<int>(state.labeled.size());
        state.labeled.push_back(std::move(s));
      } else {
        state.labeled[it->second] = std::move(s);
      }
    }

    // object enforcement: re-mine hard negatives, retrain with F_s active
    HardNegatives hn = mine_all_hard_negatives(ctx, props, state.labeled, state.model, iter);
    hard_pairs = hn.pairs;
    // hard-negative samples replace last iteration's mining (fresh each time),
    // keeping the union of provenances distinct in the labeled set
    // Video hard negatives track the current boundary and are re-mined
    // fresh; bootstrapped negative-image windows accumulate so the model
    // cannot oscillate back onto background structure it already renounced.
    std::erase_if(state.labeled, [iter](const PoolSample& s) {
      return s.provenance == Provenance::hard_negative && !s.from_negative_image &&
             s.iteration != iter;
    });
    for (auto& s : hn.samples) state.labeled.push_back(std::move(s));
    // rebuild discovered index after erase
    discovered_frame_to_sample.clear();
    for (size_t i = 0; i < state.labeled.size(); ++i)
      if (state.labeled[i].provenance == Provenance::discovered)
        discovered_frame_to_sample[state.labeled[i].proposal.frame_index] =
            static_cast<int>(i);

    if (!hard_pairs.empty() && cfg.hp.lambda > 0.0) {
      std::vector<PoolSample> extra2;
      for (const auto& s : state.labeled)
        if (s.provenance == Provenance::propagated || s.provenance == Provenance::hard_negative)
          extra2.push_back(s);
      InstanceSet set2 = build_instances(ctx, frame_cands, split.negatives, negpool, extra2);
      CccpParams cp2 = cp;
      cp2.lambda = cfg.hp.lambda;
      cp2.warm_start = &state.model;
      CccpResult enforced = cccp_train(set2.instances, hard_pairs, cp2);
      state.model = enforced.model;
      state.model.training_iteration = iter;
      if (std::getenv("SELFDET_DEBUG_XI")) {
        std::vector<PoolSample> pos;
        for (const auto& s : state.labeled)
          if (s.label == 1) pos.push_back(s);
        std::fprintf(stderr, "  iter %d post-enforcement pos_err=%.4f (n=%zu)\n", iter,
                     labeled_error_rate(state.model, pos), pos.size());
      }
    }

    // error-rate bookkeeping and the stop rule
    // ξ estimates the reliability of the self-assigned labels, so it covers
    // the discovered/propagated samples plus the fixed negative pool. Mined
    // hard negatives are excluded: their labels are certain by construction
    // and they are selected adversarially (highest-scoring windows), so
    // including them would measure mining pressure, not labeling error.
    std::vector<PoolSample> xi_set;
    for (const auto& s : state.labeled)
      if (s.provenance != Provenance::hard_negative) xi_set.push_back(s);
    for (const auto& s : negpool.samples) xi_set.push_back(s);
    const double xi = labeled_error_rate(state.model, xi_set);
    if (std::getenv("SELFDET_DEBUG_XI")) {
      std::vector<PoolSample> pos, neg;
      for (const auto& s : xi_set) (s.label == 1 ? pos : neg).push_back(s);
      std::fprintf(stderr, "iter %d xi=%.4f pos(n=%zu)=%.4f neg(n=%zu)=%.4f\n", iter, xi,
                   pos.size(), labeled_error_rate(state.model, pos), neg.size(),
                   labeled_error_rate(state.model, neg));
    }

    LogEntry entry;
    entry.iteration = iter;
    entry.xi_l = xi;
    entry.xi_u = xi_u;
    entry.gamma = gamma_used;
    entry.alpha = {state.alpha.alpha[0], state.alpha.alpha[1], state.alpha.alpha[2]};
    entry.num_positives = state.count_positives();
    entry.num_negatives = state.count_negatives() + static_cast<int>(negpool.samples.size());
    entry.objective = discovery.objective_history.back();

    if (!state.xi_history.empty() && xi > state.xi_history.back() + cfg.hp.stop_epsilon) {
      // Stability contract: the error rate must not regress. Reject the
      // iteration, restore the last stable state, and stop.
      entry.stability_warning = true;
      state.stability_warning = true;
      state.labeled = snap_labeled;
      state.model = snap_model;
      state.alpha = snap_alpha;
      hard_pairs = snap_pairs;
      discovered_frame_to_sample = snap_discovered;
      entry.xi_l = state.xi_history.back();
      entry.gamma = 0.0;
      if (!state.gamma_history.empty()) state.gamma_history.back() = 0.0;
      entry.alpha = {state.alpha.alpha[0], state.alpha.alpha[1], state.alpha.alpha[2]};
      entry.num_positives = state.count_positives();
      entry.num_negatives =
          state.count_negatives() + static_cast<int>(negpool.samples.size());
      state.log.push_back(entry);
      state.xi_history.push_back(entry.xi_l);
      break;
    }
    state.log.push_back(entry);

    const bool stable = !state.xi_history.empty() &&
                        std::abs(xi - state.xi_history.back()) < cfg.hp.stop_epsilon;
    state.xi_history.push_back(xi);
    if (stable && iter >= 2) break;
  }
  return state;
}

} // namespace selfdet
