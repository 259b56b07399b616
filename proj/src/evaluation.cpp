#include "czsl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <set>

#include "czsl/model.hpp"

namespace czsl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

const char* world_name(World w) { return w == World::Closed ? "closed" : "open"; }

int argmax_row(const ScoreMatrix& m, int row) {
    int best = 0;
    double best_v = m.at(row, 0);
    for (int c = 1; c < m.cols; ++c)
        if (m.at(row, c) > best_v) {
            best_v = m.at(row, c);
            best = c;
        }
    return best;
}

EvalCurve bias_sweep(const ScoreMatrix& scores, const std::vector<int>& true_cols,
                     const std::vector<bool>& seen_column) {
    int n = scores.rows, cols = scores.cols;
    if (n == 0) throw UndefinedMetricError("bias sweep over an empty item set");
    if (static_cast<int>(true_cols.size()) != n ||
        static_cast<int>(seen_column.size()) != cols)
        throw DimensionError("bias_sweep label/mask sizes disagree with the score matrix");
    int n_seen_cols = static_cast<int>(std::count(seen_column.begin(), seen_column.end(), true));
    if (n_seen_cols == 0) throw UndefinedMetricError("undefined metrics: no seen candidate pairs");
    if (n_seen_cols == cols)
        throw UndefinedMetricError("undefined metrics: no unseen candidate pairs");

    // Per item: best column on each side (lowest index wins ties within a side).
    std::vector<double> best_seen_v(static_cast<size_t>(n)), best_unseen_v(static_cast<size_t>(n));
    std::vector<int> best_seen_c(static_cast<size_t>(n)), best_unseen_c(static_cast<size_t>(n));
    std::vector<bool> item_seen(static_cast<size_t>(n));
    int n_seen_items = 0, n_unseen_items = 0;
    for (int i = 0; i < n; ++i) {
        double sv = -kInf, uv = -kInf;
        int sc = -1, uc = -1;
        for (int c = 0; c < cols; ++c) {
            double v = scores.at(i, c);
            if (seen_column[static_cast<size_t>(c)]) {
                if (v > sv) {
                    sv = v;
                    sc = c;
                }
            } else if (v > uv) {
                uv = v;
                uc = c;
            }
        }
        best_seen_v[static_cast<size_t>(i)] = sv;
        best_seen_c[static_cast<size_t>(i)] = sc;
        best_unseen_v[static_cast<size_t>(i)] = uv;
        best_unseen_c[static_cast<size_t>(i)] = uc;
        int tc = true_cols[static_cast<size_t>(i)];
        if (tc < 0 || tc >= cols)
            throw DimensionError("true column " + std::to_string(tc) + " outside candidates");
        item_seen[static_cast<size_t>(i)] = seen_column[static_cast<size_t>(tc)];
        (item_seen[static_cast<size_t>(i)] ? n_seen_items : n_unseen_items) += 1;
    }
    if (n_seen_items == 0)
        throw UndefinedMetricError("undefined metrics: no seen-labeled items");
    if (n_unseen_items == 0)
        throw UndefinedMetricError("undefined metrics: no unseen-labeled items");

    // Critical biases: per-item gaps where the prediction flips sides.
    std::vector<double> gaps;
    gaps.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        gaps.push_back(best_seen_v[static_cast<size_t>(i)] - best_unseen_v[static_cast<size_t>(i)]);
    std::sort(gaps.begin(), gaps.end());
    gaps.erase(std::unique(gaps.begin(), gaps.end()), gaps.end());

    std::vector<double> biases;
    biases.push_back(gaps.front() - 1.0);
    for (size_t k = 0; k < gaps.size(); ++k) {
        biases.push_back(gaps[k]);
        if (k + 1 < gaps.size()) biases.push_back(gaps[k] + (gaps[k + 1] - gaps[k]) / 2.0);
    }
    biases.push_back(gaps.back() + 1.0);

    EvalCurve curve;
    for (double bias : biases) {
        int seen_hits = 0, unseen_hits = 0;
        for (int i = 0; i < n; ++i) {
            double biased_unseen = best_unseen_v[static_cast<size_t>(i)] + bias;
            double sv = best_seen_v[static_cast<size_t>(i)];
            int pred;
            if (biased_unseen > sv)
                pred = best_unseen_c[static_cast<size_t>(i)];
            else if (biased_unseen < sv)
                pred = best_seen_c[static_cast<size_t>(i)];
            else
                pred = std::min(best_seen_c[static_cast<size_t>(i)], best_unseen_c[static_cast<size_t>(i)]);
            if (pred == true_cols[static_cast<size_t>(i)])
                (item_seen[static_cast<size_t>(i)] ? seen_hits : unseen_hits) += 1;
        }
        curve.points.push_back({bias, static_cast<double>(seen_hits) / n_seen_items,
                                static_cast<double>(unseen_hits) / n_unseen_items});
    }

    curve.best_seen = curve.points.front().seen_acc;
    curve.best_unseen = curve.points.back().unseen_acc;
    for (const auto& p : curve.points) {
        double s = p.seen_acc, u = p.unseen_acc;
        double hm = (s + u) > 0.0 ? 2.0 * s * u / (s + u) : 0.0;
        curve.best_hm = std::max(curve.best_hm, hm);
    }
    double auc = 0.0;
    for (size_t k = 0; k + 1 < curve.points.size(); ++k) {
        const auto& a = curve.points[k];
        const auto& b = curve.points[k + 1];
        auc += (b.unseen_acc - a.unseen_acc) * (a.seen_acc + b.seen_acc) / 2.0;
    }
    curve.auc = auc;
    return curve;
}

ScoreMatrix combined_score(const ScoreMatrix& p_com, const ScoreMatrix& p_state,
                           const ScoreMatrix& p_obj, double beta, const CandidateIndex& cands) {
    if (beta < 0.0 || beta > 1.0)
        throw ParameterError("beta must lie in [0,1], got " + std::to_string(beta));
    if (p_com.cols != cands.size())
        throw IntegrityError("pair-score columns " + std::to_string(p_com.cols) +
                             " disagree with candidate count " + std::to_string(cands.size()));
    if (p_state.rows != p_com.rows || p_obj.rows != p_com.rows)
        throw IntegrityError("branch score row counts disagree");
    for (int c = 0; c < cands.size(); ++c)
        if (cands.state_of[static_cast<size_t>(c)] >= p_state.cols ||
            cands.object_of[static_cast<size_t>(c)] >= p_obj.cols)
            throw IntegrityError("candidate index maps point outside branch score columns");

    ScoreMatrix out(p_com.rows, p_com.cols);
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c)
            out.at(r, c) = beta * p_com.at(r, c) +
                           (1.0 - beta) * p_state.at(r, cands.state_of[static_cast<size_t>(c)]) *
                               p_obj.at(r, cands.object_of[static_cast<size_t>(c)]);
    return out;
}

namespace {

double cosine_rows(const Tensor& table, int a, int b) {
    int d = table.shape[1];
    const double* x = table.data.data() + static_cast<size_t>(a) * d;
    const double* y = table.data.data() + static_cast<size_t>(b) * d;
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (int i = 0; i < d; ++i) {
        xy += x[i] * y[i];
        xx += x[i] * x[i];
        yy += y[i] * y[i];
    }
    double denom = std::sqrt(xx) * std::sqrt(yy);
    return denom > 0.0 ? xy / denom : 0.0;
}

}  // namespace

std::vector<double> feasibility_scores(const CompositionSpace& space,
                                       const Tensor& state_tokens, const Tensor& object_tokens,
                                       const std::vector<Pair>& candidates) {
    // Seen partners per primitive.
    std::vector<std::vector<int>> objects_of_state(static_cast<size_t>(space.num_states()));
    std::vector<std::vector<int>> states_of_object(static_cast<size_t>(space.num_objects()));
    for (const Pair& p : space.seen_pairs) {
        objects_of_state[static_cast<size_t>(p.state)].push_back(p.object);
        states_of_object[static_cast<size_t>(p.object)].push_back(p.state);
    }
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const Pair& p : candidates) {
        if (space.is_seen(p)) {
            scores.push_back(kInf);
            continue;
        }
        double obj_side = -kInf;
        for (int other : objects_of_state[static_cast<size_t>(p.state)])
            obj_side = std::max(obj_side, cosine_rows(object_tokens, p.object, other));
        double state_side = -kInf;
        for (int other : states_of_object[static_cast<size_t>(p.object)])
            state_side = std::max(state_side, cosine_rows(state_tokens, p.state, other));
        double score;
        if (std::isinf(obj_side) && std::isinf(state_side))
            score = -kInf;  // neither primitive appears in any seen pair
        else if (std::isinf(obj_side))
            score = state_side;
        else if (std::isinf(state_side))
            score = obj_side;
        else
            score = (obj_side + state_side) / 2.0;
        scores.push_back(score);
    }
    return scores;
}

std::vector<Pair> feasibility_filter(const CompositionSpace& space, const Tensor& state_tokens,
                                     const Tensor& object_tokens, double threshold) {
    auto all = space.all_pairs();
    auto scores = feasibility_scores(space, state_tokens, object_tokens, all);
    double lo = kInf, hi = -kInf;
    for (size_t i = 0; i < all.size(); ++i) {
        if (std::isinf(scores[i])) continue;
        lo = std::min(lo, scores[i]);
        hi = std::max(hi, scores[i]);
    }
    if (std::isfinite(threshold) && lo <= hi && (threshold < lo || threshold > hi))
        std::cerr << "warning: feasibility threshold " << threshold
                  << " outside observed score range [" << lo << ", " << hi << "]\n";
    std::vector<Pair> kept;
    for (size_t i = 0; i < all.size(); ++i)
        if (scores[i] >= threshold) kept.push_back(all[i]);
    return kept;
}

namespace {

struct RawScores {
    ScoreMatrix p_com, p_state, p_obj;
    CandidateIndex cand;
    std::vector<int> true_cols;
    const SampleSet* samples = nullptr;
};

RawScores score_split(const Model& model, const Dataset& data, Split split,
                      const std::vector<Pair>& candidates, int batch_size) {
    if (!data.has_features())
        throw EvaluationError("dataset '" + data.name + "' carries no feature payload");
    const SampleSet& set = data.split(split);
    if (set.size() == 0) throw UndefinedMetricError("split has no samples");

    NoGradGuard guard;
    RawScores raw;
    raw.samples = &set;
    raw.cand = CandidateIndex::build(candidates, model.space());
    int n = set.size(), n_cand = raw.cand.size();
    raw.p_com = ScoreMatrix(n, n_cand);
    raw.p_state = ScoreMatrix(n, model.space().num_states());
    raw.p_obj = ScoreMatrix(n, model.space().num_objects());

    std::map<Pair, int> col_of;
    for (int c = 0; c < n_cand; ++c) col_of[raw.cand.pairs[static_cast<size_t>(c)]] = c;
    raw.true_cols.resize(static_cast<size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        Pair p{set.state_label[static_cast<size_t>(i)], set.object_label[static_cast<size_t>(i)]};
        auto it = col_of.find(p);
        raw.true_cols[static_cast<size_t>(i)] = it == col_of.end() ? -1 : it->second;
    }

    int dim = data.input_dim;
    for (int start = 0; start < n; start += batch_size) {
        int b = std::min(batch_size, n - start);
        auto batch = Tensor::create({b, dim});
        std::copy(set.features.begin() + static_cast<int64_t>(start) * dim,
                  set.features.begin() + static_cast<int64_t>(start + b) * dim,
                  batch->data.begin());
        auto probs = model.forward(batch, raw.cand);
        for (int r = 0; r < b; ++r) {
            for (int c = 0; c < n_cand; ++c)
                raw.p_com.at(start + r, c) = probs.p_com->data[static_cast<size_t>(r) * n_cand + static_cast<size_t>(c)];
            for (int c = 0; c < raw.p_state.cols; ++c)
                raw.p_state.at(start + r, c) =
                    probs.p_state->data[static_cast<size_t>(r) * raw.p_state.cols + static_cast<size_t>(c)];
            for (int c = 0; c < raw.p_obj.cols; ++c)
                raw.p_obj.at(start + r, c) =
                    probs.p_obj->data[static_cast<size_t>(r) * raw.p_obj.cols + static_cast<size_t>(c)];
        }
    }
    return raw;
}

EvalResult result_from_scores(const RawScores& raw, const ScoreMatrix& combined,
                              const CompositionSpace& space) {
    const SampleSet& set = *raw.samples;
    int n = combined.rows;
    EvalResult res;
    res.n_items = n;
    res.n_candidates = combined.cols;

    // Items whose true pair fell outside the candidate set (possible under
    // aggressive open-world filtering) count as permanently wrong; they keep
    // their seen/unseen label from the space.
    std::vector<int> sweep_true = raw.true_cols;
    int seen_hits = 0, unseen_hits = 0, com_hits = 0, state_hits = 0, obj_hits = 0;
    int n_seen = 0, n_unseen = 0;
    for (int i = 0; i < n; ++i) {
        Pair p{set.state_label[static_cast<size_t>(i)], set.object_label[static_cast<size_t>(i)]};
        bool seen_item = space.is_seen(p);
        (seen_item ? n_seen : n_unseen) += 1;
        int pred = argmax_row(combined, i);
        int tc = raw.true_cols[static_cast<size_t>(i)];
        bool hit = tc >= 0 && pred == tc;
        (seen_item ? seen_hits : unseen_hits) += hit ? 1 : 0;
        if (tc >= 0 && argmax_row(raw.p_com, i) == tc) ++com_hits;
        if (argmax_row(raw.p_state, i) == set.state_label[static_cast<size_t>(i)]) ++state_hits;
        if (argmax_row(raw.p_obj, i) == set.object_label[static_cast<size_t>(i)]) ++obj_hits;
    }
    res.n_seen_items = n_seen;
    res.n_unseen_items = n_unseen;
    res.raw_seen_acc = n_seen ? static_cast<double>(seen_hits) / n_seen : 0.0;
    res.raw_unseen_acc = n_unseen ? static_cast<double>(unseen_hits) / n_unseen : 0.0;
    res.com_acc = static_cast<double>(com_hits) / n;
    res.state_acc = static_cast<double>(state_hits) / n;
    res.obj_acc = static_cast<double>(obj_hits) / n;

    // The sweep needs every item's true column inside the matrix; filtered-out
    // true pairs are mapped to a sentinel column that can never win.
    ScoreMatrix padded = combined;
    std::vector<bool> seen_col(raw.cand.seen_column.begin(), raw.cand.seen_column.end());
    bool need_sentinel = false;
    for (int i = 0; i < n; ++i)
        if (sweep_true[static_cast<size_t>(i)] < 0) need_sentinel = true;
    if (need_sentinel) {
        ScoreMatrix wider(n, combined.cols + 1);
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < combined.cols; ++c) wider.at(r, c) = combined.at(r, c);
            wider.at(r, combined.cols) = -kInf;
        }
        padded = std::move(wider);
        seen_col.push_back(false);
        for (int i = 0; i < n; ++i)
            if (sweep_true[static_cast<size_t>(i)] < 0) sweep_true[static_cast<size_t>(i)] = combined.cols;
    }
    res.curve = bias_sweep(padded, sweep_true, seen_col);
    return res;
}

}  // namespace

EvalResult evaluate(const Model& model, const Dataset& data, Split split,
                    const EvalOptions& options, ScoreMatrix* scores_out) {
    std::vector<Pair> candidates;
    if (options.world == World::Closed) {
        candidates = model.space().candidate_pairs(World::Closed);
    } else if (options.feasibility_threshold) {
        candidates = feasibility_filter(model.space(), *model.prompts().state_tokens(),
                                        *model.prompts().object_tokens(),
                                        *options.feasibility_threshold);
    } else {
        candidates = model.space().all_pairs();
    }
    auto raw = score_split(model, data, split, candidates, options.batch_size);
    auto combined = combined_score(raw.p_com, raw.p_state, raw.p_obj, options.beta, raw.cand);
    if (scores_out) *scores_out = combined;
    return result_from_scores(raw, combined, model.space());
}

double calibrate_feasibility_threshold(const Model& model, const Dataset& data,
                                       const EvalOptions& open_options) {
    // Score the validation split once over the full product; candidate
    // subsets then renormalize the pair branch per threshold.
    auto all = model.space().all_pairs();
    auto raw = score_split(model, data, Split::Val, all, open_options.batch_size);
    auto feas = feasibility_scores(model.space(), *model.prompts().state_tokens(),
                                   *model.prompts().object_tokens(), all);

    std::set<double> grid{-kInf};
    for (double s : feas)
        if (std::isfinite(s)) grid.insert(s);

    double best_theta = -kInf, best_auc = -1.0;
    for (double theta : grid) {
        std::vector<int> keep;
        for (size_t i = 0; i < all.size(); ++i)
            if (feas[i] >= theta) keep.push_back(static_cast<int>(i));
        std::vector<Pair> kept_pairs;
        for (int k : keep) kept_pairs.push_back(all[static_cast<size_t>(k)]);
        auto cand = CandidateIndex::build(kept_pairs, model.space());

        int n = raw.p_com.rows;
        ScoreMatrix p_com(n, static_cast<int>(keep.size()));
        for (int r = 0; r < n; ++r) {
            double denom = 0.0;
            for (size_t c = 0; c < keep.size(); ++c) denom += raw.p_com.at(r, keep[c]);
            for (size_t c = 0; c < keep.size(); ++c)
                p_com.at(r, static_cast<int>(c)) =
                    denom > 0.0 ? raw.p_com.at(r, keep[c]) / denom : 0.0;
        }
        std::map<Pair, int> col_of;
        for (size_t c = 0; c < kept_pairs.size(); ++c) col_of[kept_pairs[c]] = static_cast<int>(c);
        RawScores sub;
        sub.p_com = std::move(p_com);
        sub.p_state = raw.p_state;
        sub.p_obj = raw.p_obj;
        sub.cand = cand;
        sub.samples = raw.samples;
        sub.true_cols.resize(raw.true_cols.size());
        const SampleSet& set = *raw.samples;
        for (int i = 0; i < n; ++i) {
            Pair p{set.state_label[static_cast<size_t>(i)], set.object_label[static_cast<size_t>(i)]};
            auto it = col_of.find(p);
            sub.true_cols[static_cast<size_t>(i)] = it == col_of.end() ? -1 : it->second;
        }
        auto combined = combined_score(sub.p_com, sub.p_state, sub.p_obj, open_options.beta,
                                       sub.cand);
        auto res = result_from_scores(sub, combined, model.space());
        if (res.curve.auc > best_auc) {
            best_auc = res.curve.auc;
            best_theta = theta;
        }
    }
    return best_theta;
}

std::string curve_csv(const EvalCurve& curve) {
    std::string out = "bias,seen_acc,unseen_acc\n";
    for (const auto& p : curve.points)
        out += fmt17(p.bias) + "," + fmt17(p.seen_acc) + "," + fmt17(p.unseen_acc) + "\n";
    return out;
}

std::string summary_csv_row(const std::string& dataset, World world, uint64_t seed,
                            const EvalCurve& curve) {
    return dataset + "," + world_name(world) + "," + std::to_string(seed) + "," +
           fmt17(curve.best_seen) + "," + fmt17(curve.best_unseen) + "," + fmt17(curve.best_hm) +
           "," + fmt17(curve.auc);
}

}  // namespace czsl
