#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgen/box.hpp"
#include "lgen/range_image.hpp"
#include "lgen/scene_graph.hpp"

namespace lgen {

using Layout = std::vector<std::pair<std::string, OrientedBox3D>>;

// ---------------------------------------------------------------------------
// Relation accuracy
// ---------------------------------------------------------------------------

struct RelationAccuracy {
    std::optional<double> rae;  // easy (positional) edges
    std::optional<double> rad;  // difficult (comparative/close-by) edges
};

// Fraction of g_in's edges that re-extraction from `boxes` reproduces. Boxes
// are parallel to g_in.nodes (index space).
inline RelationAccuracy relation_accuracy(const SceneGraph& g_in, const Layout& boxes,
                                          const RelationRuleSet& rules = {}) {
    if (boxes.size() != g_in.nodes.size())
        throw std::invalid_argument("relation_accuracy: box count " +
                                    std::to_string(boxes.size()) + " != node count " +
                                    std::to_string(g_in.nodes.size()));
    SceneGraph re = extract_relations(boxes, rules);
    auto present = [&](int src, int dst, Relation rel) {
        for (const auto& e : re.edges)
            if (e.src == src && e.dst == dst && e.rel == rel) return true;
        return false;
    };
    int64_t easy_total = 0, easy_hit = 0, diff_total = 0, diff_hit = 0;
    for (const auto& e : g_in.edges) {
        int si = g_in.node_index(e.src), di = g_in.node_index(e.dst);
        bool hit = present(si, di, e.rel);
        if (relation_is_easy(e.rel)) {
            easy_total++;
            easy_hit += hit;
        } else {
            diff_total++;
            diff_hit += hit;
        }
    }
    RelationAccuracy out;
    if (easy_total > 0)
        out.rae = static_cast<double>(easy_hit) / static_cast<double>(easy_total);
    if (diff_total > 0)
        out.rad = static_cast<double>(diff_hit) / static_cast<double>(diff_total);
    return out;
}

// ---------------------------------------------------------------------------
// Collision rate
// ---------------------------------------------------------------------------

inline constexpr double kCollisionIouThreshold = 0.05;

// Per scene: colliding unordered pairs / total pairs; averaged over scenes.
// Single-box scenes contribute 0.
inline double collision_rate(const std::vector<Layout>& scenes,
                             double iou_threshold = kCollisionIouThreshold) {
    if (iou_threshold < 0)
        throw std::invalid_argument("collision_rate: negative threshold");
    if (scenes.empty()) throw std::invalid_argument("collision_rate: no scenes");
    double acc = 0;
    for (const auto& sc : scenes) {
        size_t n = sc.size();
        if (n < 2) continue;
        int64_t pairs = 0, hits = 0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = i + 1; j < n; ++j) {
                pairs++;
                if (iou_3d(sc[i].second, sc[j].second) > iou_threshold) hits++;
            }
        acc += static_cast<double>(hits) / static_cast<double>(pairs);
    }
    return acc / static_cast<double>(scenes.size());
}

// ---------------------------------------------------------------------------
// Layout matching (precision / mean IoU)
// ---------------------------------------------------------------------------

namespace detail {

// Class-constrained matching; returns matched IoUs (one per matched pred box).
inline std::vector<double> match_layout(const Layout& pred, const Layout& gt,
                                        bool exhaustive) {
    struct Cand {
        double iou;
        size_t p, g;
    };
    std::vector<Cand> cands;
    for (size_t p = 0; p < pred.size(); ++p)
        for (size_t g = 0; g < gt.size(); ++g)
            if (pred[p].first == gt[g].first) {
                double v = iou_3d(pred[p].second, gt[g].second);
                if (v > 0) cands.push_back({v, p, g});
            }
    if (exhaustive && pred.size() <= 8 && gt.size() <= 8) {
        // maximize total IoU by recursive assignment over candidates
        std::vector<double> best_set;
        double best_sum = -1;
        std::vector<double> cur;
        std::vector<bool> used_p(pred.size(), false), used_g(gt.size(), false);
        auto rec = [&](auto&& self, size_t idx, double sum) -> void {
            if (idx == cands.size()) {
                if (sum > best_sum) {
                    best_sum = sum;
                    best_set = cur;
                }
                return;
            }
            const Cand& c = cands[idx];
            if (!used_p[c.p] && !used_g[c.g]) {
                used_p[c.p] = used_g[c.g] = true;
                cur.push_back(c.iou);
                self(self, idx + 1, sum + c.iou);
                cur.pop_back();
                used_p[c.p] = used_g[c.g] = false;
            }
            self(self, idx + 1, sum);
        };
        rec(rec, 0, 0.0);
        return best_set;
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.iou > b.iou; });
    std::vector<bool> used_p(pred.size(), false), used_g(gt.size(), false);
    std::vector<double> matched;
    for (const auto& c : cands) {
        if (used_p[c.p] || used_g[c.g]) continue;
        used_p[c.p] = used_g[c.g] = true;
        matched.push_back(c.iou);
    }
    return matched;
}

}  // namespace detail

// Percentage of predicted boxes whose matched IoU reaches tau.
inline double precision_at_iou(const std::vector<Layout>& pred,
                               const std::vector<Layout>& gt, double tau,
                               bool exhaustive = false) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("precision_at_iou: scene count mismatch");
    if (pred.empty()) throw std::invalid_argument("precision_at_iou: no scenes");
    int64_t total = 0, hit = 0;
    for (size_t s = 0; s < pred.size(); ++s) {
        total += static_cast<int64_t>(pred[s].size());
        for (double v : detail::match_layout(pred[s], gt[s], exhaustive))
            if (v >= tau) hit++;
    }
    if (total == 0) throw std::invalid_argument("precision_at_iou: no predicted boxes");
    return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

// Mean matched 3D IoU in percent; unmatched boxes on either side count as 0
// via the max(|pred|, |gt|) denominator.
inline double mean_layout_iou(const std::vector<Layout>& pred,
                              const std::vector<Layout>& gt, bool exhaustive = false) {
    if (pred.size() != gt.size())
        throw std::invalid_argument("mean_layout_iou: scene count mismatch");
    if (pred.empty()) throw std::invalid_argument("mean_layout_iou: no scenes");
    double acc = 0;
    for (size_t s = 0; s < pred.size(); ++s) {
        auto matched = detail::match_layout(pred[s], gt[s], exhaustive);
        double denom = static_cast<double>(std::max(pred[s].size(), gt[s].size()));
        if (denom == 0) continue;
        acc += std::accumulate(matched.begin(), matched.end(), 0.0) / denom;
    }
    return 100.0 * acc / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// BEV histograms, JSD, MMD
// ---------------------------------------------------------------------------

inline constexpr int kBevBins = 100;

// Occupancy histogram over [-R, R]^2; points outside the range are ignored.
inline std::vector<double> bev_histogram(const PointCloud& pc, double range) {
    std::vector<double> h(static_cast<size_t>(kBevBins) * kBevBins, 0.0);
    for (const auto& p : pc.points) {
        if (p.x < -range || p.x >= range || p.y < -range || p.y >= range) continue;
        int bx = static_cast<int>((p.x + range) / (2 * range) * kBevBins);
        int by = static_cast<int>((p.y + range) / (2 * range) * kBevBins);
        bx = std::clamp(bx, 0, kBevBins - 1);
        by = std::clamp(by, 0, kBevBins - 1);
        h[static_cast<size_t>(bx * kBevBins + by)] += 1.0;
    }
    return h;
}

inline void normalize_hist(std::vector<double>& h) {
    double s = std::accumulate(h.begin(), h.end(), 0.0);
    if (s > 0)
        for (double& v : h) v /= s;
}

// Jensen-Shannon divergence, base 2, between aggregate BEV occupancy
// distributions of the two sets.
inline double jsd_bev(const std::vector<PointCloud>& set_a,
                      const std::vector<PointCloud>& set_b, double range = 50.0) {
    if (set_a.empty() || set_b.empty())
        throw std::invalid_argument("jsd_bev: empty set");
    auto agg = [&](const std::vector<PointCloud>& set) {
        std::vector<double> h(static_cast<size_t>(kBevBins) * kBevBins, 0.0);
        for (const auto& pc : set) {
            auto hh = bev_histogram(pc, range);
            for (size_t i = 0; i < h.size(); ++i) h[i] += hh[i];
        }
        double s = std::accumulate(h.begin(), h.end(), 0.0);
        if (s <= 0) throw std::invalid_argument("jsd_bev: no points in range");
        for (double& v : h) v /= s;
        return h;
    };
    auto pa = agg(set_a), pb = agg(set_b);
    double jsd = 0;
    for (size_t i = 0; i < pa.size(); ++i) {
        double m = 0.5 * (pa[i] + pb[i]);
        if (pa[i] > 0) jsd += 0.5 * pa[i] * std::log2(pa[i] / m);
        if (pb[i] > 0) jsd += 0.5 * pb[i] * std::log2(pb[i] / m);
    }
    return jsd;
}

// Unbiased squared MMD with a Gaussian kernel over per-cloud normalized BEV
// histograms. bandwidth <= 0 selects the median pairwise-distance heuristic.
// When |a| == |b| the cross term also excludes index-equal pairs, so
// mmd(a, a) cancels to exactly 0.
inline double mmd_point(const std::vector<PointCloud>& set_a,
                        const std::vector<PointCloud>& set_b, double bandwidth = 0.0,
                        double range = 50.0) {
    size_t m = set_a.size(), n = set_b.size();
    if (m < 2 || n < 2)
        throw std::invalid_argument("mmd_point: need at least 2 clouds per set");
    std::vector<std::vector<double>> fa, fb;
    for (const auto& pc : set_a) {
        auto h = bev_histogram(pc, range);
        normalize_hist(h);
        fa.push_back(std::move(h));
    }
    for (const auto& pc : set_b) {
        auto h = bev_histogram(pc, range);
        normalize_hist(h);
        fb.push_back(std::move(h));
    }
    auto dist2 = [](const std::vector<double>& x, const std::vector<double>& y) {
        double s = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            double d = x[i] - y[i];
            s += d * d;
        }
        return s;
    };
    double sigma2 = bandwidth * bandwidth;
    if (bandwidth <= 0) {
        std::vector<double> d2s;
        std::vector<const std::vector<double>*> all;
        for (const auto& h : fa) all.push_back(&h);
        for (const auto& h : fb) all.push_back(&h);
        for (size_t i = 0; i < all.size(); ++i)
            for (size_t j = i + 1; j < all.size(); ++j)
                d2s.push_back(dist2(*all[i], *all[j]));
        std::sort(d2s.begin(), d2s.end());
        double med = d2s.empty() ? 1.0 : d2s[d2s.size() / 2];
        sigma2 = med > 0 ? med : 1.0;
    }
    auto kern = [&](const std::vector<double>& x, const std::vector<double>& y) {
        return std::exp(-dist2(x, y) / (2.0 * sigma2));
    };
    double xx = 0, yy = 0;
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j)
            if (i != j) xx += kern(fa[i], fa[j]);
    xx /= static_cast<double>(m * (m - 1));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j)
            if (i != j) yy += kern(fb[i], fb[j]);
    yy /= static_cast<double>(n * (n - 1));
    double xy = 0;
    if (m == n) {
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j)
                if (i != j) xy += kern(fa[i], fb[j]);
        xy /= static_cast<double>(m * (m - 1));
    } else {
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) xy += kern(fa[i], fb[j]);
        xy /= static_cast<double>(m * n);
    }
    return xx + yy - 2.0 * xy;
}

// ---------------------------------------------------------------------------
// Feature files and Frechet distance
// ---------------------------------------------------------------------------

// "LLFT" | n u64 | d u64 | n x d f32, little-endian.
inline void save_features(const std::string& path,
                          const std::vector<std::vector<double>>& rows) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_features: cannot open " + path);
    os.write("LLFT", 4);
    uint64_t n = rows.size();
    uint64_t d = rows.empty() ? 0 : rows[0].size();
    os.write(reinterpret_cast<const char*>(&n), 8);
    os.write(reinterpret_cast<const char*>(&d), 8);
    for (const auto& r : rows) {
        if (r.size() != d)
            throw std::invalid_argument("save_features: ragged rows");
        for (double v : r) {
            float f = static_cast<float>(v);
            os.write(reinterpret_cast<const char*>(&f), 4);
        }
    }
    if (!os) throw std::runtime_error("save_features: write failed for " + path);
}

inline std::vector<std::vector<double>> load_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_features: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LLFT", 4) != 0)
        throw std::runtime_error("load_features: bad magic in " + path);
    uint64_t n = 0, d = 0;
    is.read(reinterpret_cast<char*>(&n), 8);
    is.read(reinterpret_cast<char*>(&d), 8);
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    for (auto& r : rows)
        for (double& v : r) {
            float f;
            is.read(reinterpret_cast<char*>(&f), 4);
            v = f;
        }
    if (!is) throw std::runtime_error("load_features: truncated file " + path);
    return rows;
}

namespace detail {

// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major d x d).
// Returns eigenvalues; if vecs != nullptr it receives the column eigenvectors.
inline std::vector<double> jacobi_eigen(std::vector<double> a, size_t d,
                                        std::vector<double>* vecs = nullptr) {
    std::vector<double> v(d * d, 0.0);
    for (size_t i = 0; i < d; ++i) v[i * d + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (size_t p = 0; p < d; ++p)
            for (size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        if (off < 1e-24) break;
        for (size_t p = 0; p < d; ++p)
            for (size_t q = p + 1; q < d; ++q) {
                double apq = a[p * d + q];
                if (std::fabs(apq) < 1e-18) continue;
                double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (size_t k = 0; k < d; ++k) {
                    double akp = a[k * d + p], akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (size_t k = 0; k < d; ++k) {
                    double apk = a[p * d + k], aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (size_t k = 0; k < d; ++k) {
                    double vkp = v[k * d + p], vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<double> eig(d);
    for (size_t i = 0; i < d; ++i) eig[i] = a[i * d + i];
    if (vecs) *vecs = std::move(v);
    return eig;
}

inline std::vector<double> mat_mul(const std::vector<double>& a,
                                   const std::vector<double>& b, size_t d) {
    std::vector<double> c(d * d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t k = 0; k < d; ++k) {
            double aik = a[i * d + k];
            if (aik == 0) continue;
            for (size_t j = 0; j < d; ++j) c[i * d + j] += aik * b[k * d + j];
        }
    return c;
}

// Symmetric PSD square root via eigen-decomposition.
inline std::vector<double> sym_sqrt(const std::vector<double>& m, size_t d) {
    std::vector<double> vecs;
    auto eig = jacobi_eigen(m, d, &vecs);
    std::vector<double> out(d * d, 0.0);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j) {
            double s = 0;
            for (size_t k = 0; k < d; ++k)
                s += vecs[i * d + k] * std::sqrt(std::max(eig[k], 0.0)) *
                     vecs[j * d + k];
            out[i * d + j] = s;
        }
    return out;
}

}  // namespace detail

struct FrechetResult {
    double value = 0;
    bool regularized = false;  // covariance was near-singular and got 1e-6 I added
};

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the matrix root
// computed on the symmetrized product sqrt(Sa) Sb sqrt(Sa).
inline FrechetResult frechet_distance(const std::vector<std::vector<double>>& fa,
                                      const std::vector<std::vector<double>>& fb) {
    if (fa.empty() || fb.empty())
        throw std::invalid_argument("frechet_distance: empty feature set");
    size_t d = fa[0].size();
    if (d == 0 || fb[0].size() != d)
        throw std::invalid_argument("frechet_distance: dimension mismatch");
    if (fa.size() < d + 1 || fb.size() < d + 1)
        throw std::invalid_argument("frechet_distance: need at least dim+1 rows");
    auto stats = [&](const std::vector<std::vector<double>>& f, std::vector<double>& mu,
                     std::vector<double>& cov) {
        size_t n = f.size();
        mu.assign(d, 0.0);
        for (const auto& r : f)
            for (size_t i = 0; i < d; ++i) mu[i] += r[i];
        for (double& v : mu) v /= static_cast<double>(n);
        cov.assign(d * d, 0.0);
        for (const auto& r : f)
            for (size_t i = 0; i < d; ++i)
                for (size_t j = 0; j < d; ++j)
                    cov[i * d + j] += (r[i] - mu[i]) * (r[j] - mu[j]);
        for (double& v : cov) v /= static_cast<double>(n - 1);
    };
    std::vector<double> mua, mub, sa, sb;
    stats(fa, mua, sa);
    stats(fb, mub, sb);
    FrechetResult res;
    auto min_eig = [&](const std::vector<double>& m) {
        auto e = detail::jacobi_eigen(m, d);
        return *std::min_element(e.begin(), e.end());
    };
    if (min_eig(sa) < 1e-10 || min_eig(sb) < 1e-10) {
        res.regularized = true;
        for (size_t i = 0; i < d; ++i) {
            sa[i * d + i] += 1e-6;
            sb[i * d + i] += 1e-6;
        }
    }
    double mu2 = 0;
    for (size_t i = 0; i < d; ++i) {
        double diff = mua[i] - mub[i];
        mu2 += diff * diff;
    }
    double tr = 0;
    for (size_t i = 0; i < d; ++i) tr += sa[i * d + i] + sb[i * d + i];
    auto ra = detail::sym_sqrt(sa, d);
    auto prod = detail::mat_mul(detail::mat_mul(ra, sb, d), ra, d);
    // symmetrize against round-off before the final eigen pass
    for (size_t i = 0; i < d; ++i)
        for (size_t j = i + 1; j < d; ++j) {
            double s = 0.5 * (prod[i * d + j] + prod[j * d + i]);
            prod[i * d + j] = prod[j * d + i] = s;
        }
    double tr_sqrt = 0;
    for (double e : detail::jacobi_eigen(prod, d))
        tr_sqrt += std::sqrt(std::max(e, 0.0));
    res.value = mu2 + tr - 2.0 * tr_sqrt;
    return res;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct LayoutEvalReport {
    std::optional<double> rae, rad;  // fractions
    double cr = 0;                   // fraction
    double prec_03 = 0, prec_05 = 0; // percent
    double iou = 0;                  // percent
    nlohmann::json to_json() const {
        nlohmann::json j{{"cr", cr},
                         {"prec_0.3", prec_03},
                         {"prec_0.5", prec_05},
                         {"iou", iou}};
        if (rae) j["rae"] = *rae;
        if (rad) j["rad"] = *rad;
        return j;
    }
};

struct SceneEvalReport {
    double jsd = 0, mmd = 0;
    std::optional<double> frd, fpd;
    bool frechet_regularized = false;
    nlohmann::json to_json() const {
        nlohmann::json j{{"jsd", jsd}, {"mmd", mmd}};
        if (frd) j["frd"] = *frd;
        if (fpd) j["fpd"] = *fpd;
        if (frechet_regularized) j["frechet_regularized"] = true;
        return j;
    }
};

}  // namespace lgen
