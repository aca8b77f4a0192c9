#include "slhsi/spotmatch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <tuple>

#include "slhsi/error.hpp"

namespace slhsi {

namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Proposal {
    int captured;
    int reference;
    double distance;
};

// Smallest distance wins; ties go to the lower captured index.
std::vector<Proposal> resolve_conflicts(std::vector<Proposal> proposals, std::set<int> used_reference) {
    std::sort(proposals.begin(), proposals.end(), [](const Proposal& a, const Proposal& b) {
        return std::tie(a.distance, a.captured, a.reference) < std::tie(b.distance, b.captured, b.reference);
    });
    std::set<int> used_captured;
    std::vector<Proposal> accepted;
    for (const auto& p : proposals) {
        if (used_captured.count(p.captured) || used_reference.count(p.reference)) continue;
        used_captured.insert(p.captured);
        used_reference.insert(p.reference);
        accepted.push_back(p);
    }
    return accepted;
}

// Median disparity disagreement between pairing captured u with reference r and
// the active matches of u's neighbours.
double disparity_deviation(const CapturedSpots& captured, const ReferenceSpots& reference,
                           const std::map<int, int>& active, int u, int r) {
    const Vec2 d = captured.centers[static_cast<std::size_t>(u)] - reference.spots[static_cast<std::size_t>(r)].center;
    std::vector<double> dev;
    for (int n : captured.graph.adjacency[static_cast<std::size_t>(u)]) {
        const auto it = active.find(n);
        if (it == active.end()) continue;
        const Vec2 e = captured.centers[static_cast<std::size_t>(n)] -
                       reference.spots[static_cast<std::size_t>(it->second)].center;
        dev.push_back((e - d).norm());
    }
    if (dev.empty()) return std::numeric_limits<double>::infinity();
    std::nth_element(dev.begin(), dev.begin() + static_cast<std::ptrdiff_t>(dev.size() / 2), dev.end());
    return dev[dev.size() / 2];
}

}  // namespace

bool NeighborGraph::adjacent(int a, int b) const {
    const auto& list = adjacency.at(static_cast<std::size_t>(a));
    return std::binary_search(list.begin(), list.end(), b);
}

std::vector<int> NeighborGraph::within_hops(int v, int hops) const {
    std::set<int> seen{v};
    std::vector<int> frontier{v};
    for (int h = 0; h < hops; ++h) {
        std::vector<int> next;
        for (int u : frontier) {
            for (int w : adjacency[static_cast<std::size_t>(u)]) {
                if (seen.insert(w).second) next.push_back(w);
            }
        }
        frontier = std::move(next);
    }
    seen.erase(v);
    return {seen.begin(), seen.end()};
}

std::vector<std::pair<int, int>> NeighborGraph::edges() const {
    std::vector<std::pair<int, int>> out;
    for (int a = 0; a < size(); ++a) {
        for (int b : adjacency[static_cast<std::size_t>(a)]) {
            if (a < b) out.emplace_back(a, b);
        }
    }
    return out;
}

NeighborGraph build_graph(const std::vector<Vec2>& centers, double alpha) {
    if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "neighborhood alpha must be positive");
    NeighborGraph g;
    g.centers = centers;
    g.triangles = delaunay_triangulate(centers);
    const std::size_t n = centers.size();
    std::vector<std::set<int>> adj(n);
    for (const auto& t : g.triangles) {
        for (int e = 0; e < 3; ++e) {
            adj[t[e]].insert(t[(e + 1) % 3]);
            adj[t[(e + 1) % 3]].insert(t[e]);
        }
    }
    g.adjacency.resize(n);
    g.median_edge.assign(n, 0.0);
    std::vector<double> all_lengths;
    for (std::size_t i = 0; i < n; ++i) {
        g.adjacency[i].assign(adj[i].begin(), adj[i].end());
        std::vector<double> lengths;
        for (int j : g.adjacency[i]) lengths.push_back((centers[i] - centers[j]).norm());
        all_lengths.insert(all_lengths.end(), lengths.begin(), lengths.end());
        g.median_edge[i] = median_of(lengths);
    }
    const double fallback = median_of(all_lengths);
    g.radius.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(g.median_edge[i] > 0.0)) g.median_edge[i] = fallback > 0.0 ? fallback : 1.0;
        g.radius[i] = alpha * g.median_edge[i];
    }
    return g;
}

SpotDescriptor build_descriptor(const Image& image, const Vec2& center, double radius, bool* clamped) {
    SpotDescriptor d;
    bool outside = false;
    for (int i = 0; i < kDescriptorDirections; ++i) {
        const double t = 2.0 * std::numbers::pi * i / kDescriptorDirections;
        const double x = center.x() + radius * std::cos(t);
        const double y = center.y() + radius * std::sin(t);
        if (!image.contains(x, y)) outside = true;
        d.row(i) = image.sample_rgb(x, y).transpose();
    }
    if (clamped) *clamped = outside;
    return d;
}

ReferenceDescriptorSet ReferenceDescriptorSet::from_base(const SpotDescriptor& base) {
    ReferenceDescriptorSet set;
    for (int k = 0; k < kDescriptorDirections; ++k) {
        for (int i = 0; i < kDescriptorDirections; ++i) {
            set.shifts[k].row(i) = base.row((i + k) % kDescriptorDirections);
        }
    }
    return set;
}

DescriptorDistance descriptor_distance(const SpotDescriptor& captured, const ReferenceDescriptorSet& reference) {
    DescriptorDistance best{std::numeric_limits<double>::infinity(), 0};
    for (int k = 0; k < kDescriptorDirections; ++k) {
        const double d = (captured - reference.shifts[k]).norm();
        if (d < best.distance) best = {d, k};
    }
    best.distance /= std::sqrt(static_cast<double>(kDescriptorDirections * 3));
    return best;
}

Vec3 normalize_color(const Vec3& rgb) {
    const Vec3 c = rgb.cwiseMax(0.0);
    const double n = c.norm();
    return n > 1e-12 ? Vec3(c / n) : Vec3::Zero();
}

Image paint_color_field(int width, int height, const std::vector<Vec2>& centers, const std::vector<Vec3>& colors,
                        const std::vector<double>& reach) {
    if (centers.size() != colors.size() || centers.size() != reach.size()) {
        throw Error(ErrorCode::InvalidArgument, "paint_color_field: size mismatch");
    }
    Image field(width, height, 3, 0.0f);
    std::vector<double> best(static_cast<std::size_t>(width) * height, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < centers.size(); ++i) {
        const Vec3 color = normalize_color(colors[i]);
        const double r = reach[i];
        const int x0 = std::max(0, static_cast<int>(std::floor(centers[i].x() - r)));
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(centers[i].x() + r)));
        const int y0 = std::max(0, static_cast<int>(std::floor(centers[i].y() - r)));
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(centers[i].y() + r)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d2 = (Vec2(x, y) - centers[i]).squaredNorm();
                auto& slot = best[static_cast<std::size_t>(y) * width + x];
                if (d2 > r * r || d2 >= slot) continue;
                slot = d2;
                for (int c = 0; c < 3; ++c) field.at(x, y, c) = static_cast<float>(color[c]);
            }
        }
    }
    return field;
}

void MatchConfig::validate() const {
    if (!(distance_threshold > 0.0)) throw Error(ErrorCode::InvalidArgument, "distance_threshold must be positive");
    if (!(propagation_threshold > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "propagation_threshold must be positive");
    }
    if (!(epipolar_band_halfwidth > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "epipolar_band_halfwidth must be positive");
    }
    if (max_propagation_rounds <= 0) throw Error(ErrorCode::InvalidArgument, "max_propagation_rounds must be positive");
    if (!(neighborhood_alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "neighborhood_alpha must be positive");
    if (!(paint_reach > 0.0)) throw Error(ErrorCode::InvalidArgument, "paint_reach must be positive");
    if (!(prune_fraction > 0.0 && prune_fraction <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "prune_fraction must be in (0, 1]");
    }
    if (!(propagation_ratio > 0.0 && propagation_ratio <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "propagation_ratio must be in (0, 1]");
    }
    if (!(initial_ratio > 0.0 && initial_ratio <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "initial_ratio must be in (0, 1]");
    }
    if (!(disparity_tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "disparity_tolerance must be positive");
    if (prune_hops < 1 || propagation_hops < 1) throw Error(ErrorCode::InvalidArgument, "hop counts must be >= 1");
    if (!(min_depth_mm >= 0.0 && max_depth_mm > min_depth_mm)) {
        throw Error(ErrorCode::InvalidArgument, "depth window must satisfy 0 <= min < max");
    }
}

const char* to_string(MatchFlag flag) {
    switch (flag) {
        case MatchFlag::Initial: return "initial";
        case MatchFlag::Propagated: return "propagated";
        case MatchFlag::Pruned: return "pruned";
    }
    return "unknown";
}

MatchFlag match_flag_from_string(const std::string& text) {
    if (text == "initial") return MatchFlag::Initial;
    if (text == "propagated") return MatchFlag::Propagated;
    if (text == "pruned") return MatchFlag::Pruned;
    throw Error(ErrorCode::InvalidArgument, "unknown match flag '" + text + "'");
}

std::vector<Match> MatchSet::active() const {
    std::vector<Match> out;
    for (const auto& m : matches) {
        if (m.flag != MatchFlag::Pruned) out.push_back(m);
    }
    return out;
}

int MatchSet::active_count() const {
    return static_cast<int>(std::count_if(matches.begin(), matches.end(),
                                          [](const Match& m) { return m.flag != MatchFlag::Pruned; }));
}

bool MatchSet::is_one_to_one() const {
    std::set<int> cap;
    std::set<int> ref;
    for (const auto& m : matches) {
        if (m.flag == MatchFlag::Pruned) continue;
        if (!cap.insert(m.captured).second || !ref.insert(m.reference).second) return false;
    }
    return true;
}

std::map<int, int> MatchSet::correspondence() const {
    std::map<int, int> out;
    for (const auto& m : matches) {
        if (m.flag != MatchFlag::Pruned) out[m.captured] = m.reference;
    }
    return out;
}

CapturedSpots prepare_captured(const SpotDetection& detections, int image_width, int image_height,
                               const MatchConfig& config) {
    CapturedSpots out;
    std::vector<Vec3> colors;
    for (const auto& d : detections) {
        out.centers.push_back(d.center);
        colors.push_back(d.rgb);
    }
    if (out.centers.size() < 3) return out;
    out.graph = build_graph(out.centers, config.neighborhood_alpha);
    std::vector<double> reach;
    for (double m : out.graph.median_edge) reach.push_back(config.paint_reach * m);
    out.color_field = paint_color_field(image_width, image_height, out.centers, colors, reach);
    for (std::size_t i = 0; i < out.centers.size(); ++i) {
        out.descriptors.push_back(build_descriptor(out.color_field, out.centers[i], out.graph.radius[i]));
    }
    return out;
}

ReferenceSpots prepare_reference(const ReferenceImage& reference, const CalibrationBundle& bundle,
                                 const MatchConfig& config) {
    ReferenceSpots out;
    out.spots = reference.spots;
    std::vector<Vec2> centers;
    std::vector<Vec3> colors;
    for (const auto& s : reference.spots) {
        centers.push_back(s.center);
        colors.push_back(s.rgb);
        out.epipolar_lines.push_back(epipolar_line(bundle, s.projector_pixel));
    }
    if (centers.size() < 3) return out;
    out.graph = build_graph(centers, config.neighborhood_alpha);
    std::vector<double> reach;
    for (double m : out.graph.median_edge) reach.push_back(config.paint_reach * m);
    out.color_field = paint_color_field(reference.image.width(), reference.image.height(), centers, colors, reach);
    for (std::size_t i = 0; i < centers.size(); ++i) {
        out.descriptor_sets.push_back(
            ReferenceDescriptorSet::from_base(build_descriptor(out.color_field, centers[i], out.graph.radius[i])));
    }
    return out;
}

double self_match_threshold(const ReferenceImage& image, const ReferenceSpots& reference, const MatchConfig& config,
                            double q) {
    SpotDetection self;
    std::vector<int> index;
    for (int i = 0; i < static_cast<int>(reference.spots.size()); ++i) {
        const ReferenceSpot& s = reference.spots[static_cast<std::size_t>(i)];
        if (!s.in_bounds) continue;
        Detection d;
        d.center = s.center;
        d.rgb = mean_disk_rgb(image.image, s.center, 2.0);
        self.push_back(d);
        index.push_back(i);
    }
    const CapturedSpots captured = prepare_captured(self, image.image.width(), image.image.height(), config);
    std::vector<double> distances;
    for (std::size_t k = 0; k < captured.descriptors.size(); ++k) {
        distances.push_back(descriptor_distance(captured.descriptors[k],
                                                reference.descriptor_sets[static_cast<std::size_t>(index[k])])
                                .distance);
    }
    return quantile(distances, q);
}

bool geometrically_admissible(const CapturedSpots& captured, int c, const ReferenceSpots& reference, int r,
                              const CalibrationBundle& bundle, const MatchConfig& config) {
    const Vec2& pixel = captured.centers[static_cast<std::size_t>(c)];
    if (line_distance(reference.epipolar_lines[static_cast<std::size_t>(r)], pixel) >
        config.epipolar_band_halfwidth) {
        return false;
    }
    try {
        const Triangulation t = triangulate(bundle, pixel, reference.spots[static_cast<std::size_t>(r)].projector_pixel);
        const double depth = (bundle.camera.pose.rotation * t.point + bundle.camera.pose.translation).z();
        return depth >= config.min_depth_mm && depth <= config.max_depth_mm;
    } catch (const Error&) {
        return false;
    }
}

MatchSet initial_match(const CapturedSpots& captured, const ReferenceSpots& reference,
                       const CalibrationBundle& bundle, const MatchConfig& config) {
    config.validate();
    MatchSet out;
    if (captured.descriptors.empty() || reference.descriptor_sets.empty()) return out;
    std::vector<Proposal> proposals;
    for (int c = 0; c < static_cast<int>(captured.descriptors.size()); ++c) {
        Proposal best{c, -1, std::numeric_limits<double>::infinity()};
        double second = std::numeric_limits<double>::infinity();
        for (int r = 0; r < static_cast<int>(reference.descriptor_sets.size()); ++r) {
            if (!reference.spots[static_cast<std::size_t>(r)].in_bounds) continue;
            if (!geometrically_admissible(captured, c, reference, r, bundle, config)) continue;
            const double d = descriptor_distance(captured.descriptors[static_cast<std::size_t>(c)],
                                                 reference.descriptor_sets[static_cast<std::size_t>(r)])
                                 .distance;
            if (d < best.distance) {
                second = best.distance;
                best = {c, r, d};
            } else if (d < second) {
                second = d;
            }
        }
        // Seeds must be unambiguous along the epipolar band.
        if (best.reference >= 0 && best.distance < config.distance_threshold &&
            best.distance < config.initial_ratio * second) {
            proposals.push_back(best);
        }
    }
    for (const auto& p : resolve_conflicts(std::move(proposals), {})) {
        out.matches.push_back({p.captured, p.reference, p.distance, MatchFlag::Initial});
    }
    std::sort(out.matches.begin(), out.matches.end(),
              [](const Match& a, const Match& b) { return a.captured < b.captured; });
    return out;
}

MatchSet prune(const MatchSet& matches, const NeighborGraph& captured, const NeighborGraph& reference,
               const MatchConfig& config) {
    MatchSet out = matches;
    const std::map<int, int> active = matches.correspondence();
    if (active.empty()) return out;
    std::vector<bool> remove(out.matches.size(), false);
    for (std::size_t i = 0; i < out.matches.size(); ++i) {
        const Match& m = out.matches[i];
        if (m.flag == MatchFlag::Pruned) continue;
        const auto near = reference.within_hops(m.reference, config.prune_hops);
        // Neighbors vote for the match when their reference spot is close in the
        // reference graph and their image displacement agrees with this one.
        const Vec2 disparity = captured.centers[static_cast<std::size_t>(m.captured)] -
                               reference.centers[static_cast<std::size_t>(m.reference)];
        const double tolerance =
            config.disparity_tolerance * reference.median_edge[static_cast<std::size_t>(m.reference)];
        int voters = 0;
        int support = 0;
        for (int n : captured.adjacency[static_cast<std::size_t>(m.captured)]) {
            const auto it = active.find(n);
            if (it == active.end()) continue;
            ++voters;
            if (!std::binary_search(near.begin(), near.end(), it->second)) continue;
            const Vec2 other = captured.centers[static_cast<std::size_t>(n)] -
                               reference.centers[static_cast<std::size_t>(it->second)];
            if ((other - disparity).norm() <= tolerance) ++support;
        }
        if (voters > 0 && support < config.prune_fraction * voters) remove[i] = true;
    }
    for (std::size_t i = 0; i < out.matches.size(); ++i) {
        if (remove[i]) out.matches[i].flag = MatchFlag::Pruned;
    }
    return out;
}

MatchSet propagate(const MatchSet& matches, const CapturedSpots& captured, const ReferenceSpots& reference,
                   const CalibrationBundle& bundle, const MatchConfig& config) {
    config.validate();
    MatchSet out = matches;
    out.round_counts.clear();
    out.converged = false;
    std::set<std::pair<int, int>> rejected;
    for (const auto& m : matches.matches) {
        if (m.flag == MatchFlag::Pruned) rejected.insert({m.captured, m.reference});
    }
    if (captured.descriptors.empty() || reference.descriptor_sets.empty()) {
        out.converged = true;
        return out;
    }

    double dominance = 0.5;
    bool retried = false;
    for (int round = 0; round < config.max_propagation_rounds; ++round) {
        const std::map<int, int> active = out.correspondence();
        std::set<int> used_reference;
        for (const auto& [c, r] : active) used_reference.insert(r);

        std::vector<Proposal> proposals;
        for (int u = 0; u < captured.graph.size(); ++u) {
            if (active.count(u)) continue;
            std::set<int> candidates;
            for (int n : captured.graph.adjacency[static_cast<std::size_t>(u)]) {
                const auto it = active.find(n);
                if (it == active.end()) continue;
                for (int r : reference.graph.within_hops(it->second, config.propagation_hops)) candidates.insert(r);
            }
            std::vector<Proposal> scored;
            for (int r : candidates) {
                if (used_reference.count(r) || rejected.count({u, r})) continue;
                if (!reference.spots[static_cast<std::size_t>(r)].in_bounds) continue;
                if (!geometrically_admissible(captured, u, reference, r, bundle, config)) continue;
                const double d = descriptor_distance(captured.descriptors[static_cast<std::size_t>(u)],
                                                     reference.descriptor_sets[static_cast<std::size_t>(r)])
                                     .distance;
                scored.push_back({u, r, d});
            }
            if (scored.empty()) continue;
            std::sort(scored.begin(), scored.end(),
                      [](const Proposal& a, const Proposal& b) { return a.distance < b.distance; });
            const Proposal& best = scored.front();
            if (best.distance >= config.propagation_threshold) continue;
            if (scored.size() == 1 || best.distance < config.propagation_ratio * scored[1].distance) {
                proposals.push_back(best);
                continue;
            }
            // Descriptor near-tie: the candidate whose disparity agrees with the matched
            // neighbours wins when it clearly beats the rest. Otherwise wait a round.
            std::vector<std::pair<double, Proposal>> tied;
            for (const auto& p : scored) {
                if (config.propagation_ratio * p.distance > best.distance) break;
                tied.push_back({disparity_deviation(captured, reference, active, u, p.reference), p});
            }
            std::sort(tied.begin(), tied.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
            if (tied.size() > 1 && tied[0].first < dominance * tied[1].first && tied[0].second.distance < config.propagation_threshold) {
                proposals.push_back(tied[0].second);
            }
        }
        for (const auto& p : resolve_conflicts(std::move(proposals), used_reference)) {
            out.matches.push_back({p.captured, p.reference, p.distance, MatchFlag::Propagated});
        }

        const std::size_t rejected_before = rejected.size();
        const std::vector<Match> before = out.matches;
        out = prune(out, captured.graph, reference.graph, config);
        for (std::size_t i = 0; i < out.matches.size(); ++i) {
            if (out.matches[i].flag == MatchFlag::Pruned && before[i].flag != MatchFlag::Pruned) {
                rejected.insert({out.matches[i].captured, out.matches[i].reference});
            }
        }

        out.round_counts.push_back(out.active_count());
        // A round that neither changed the active set nor rejected a pair is a fixpoint.
        if (out.correspondence() == active && rejected.size() == rejected_before) {
            if (dominance < 1.0) {
                // Settle the remaining near ties by any disparity advantage.
                dominance = 1.0;
                continue;
            }
            if (!retried && !rejected.empty()) {
                // Pairs pruned before their neighbourhood settled get one more try.
                retried = true;
                rejected.clear();
                continue;
            }
            out.converged = true;
            break;
        }
    }
    return out;
}

MatchSet match_spots(const CapturedSpots& captured, const ReferenceSpots& reference,
                     const CalibrationBundle& bundle, const MatchConfig& config) {
    MatchSet m = initial_match(captured, reference, bundle, config);
    if (captured.graph.size() == 0 || reference.graph.size() == 0) return m;
    m = prune(m, captured.graph, reference.graph, config);
    return propagate(m, captured, reference, bundle, config);
}

MatchEvaluation evaluate_matching(const MatchSet& predicted, const std::map<int, int>& truth, int annotated) {
    MatchEvaluation e;
    e.annotated = annotated;
    for (const auto& m : predicted.active()) {
        ++e.predicted;
        const auto it = truth.find(m.captured);
        if (it != truth.end() && it->second == m.reference) ++e.true_positives;
    }
    e.sensitivity = annotated > 0 ? static_cast<double>(e.true_positives) / annotated : 0.0;
    e.precision_defined = e.predicted > 0;
    e.precision = e.precision_defined ? static_cast<double>(e.true_positives) / e.predicted : 0.0;
    return e;
}

std::map<int, int> associate_detections(const std::vector<Vec2>& detections,
                                        const std::vector<std::pair<int, Vec2>>& labelled, double tolerance) {
    std::vector<std::tuple<double, int, int>> pairs;
    for (int d = 0; d < static_cast<int>(detections.size()); ++d) {
        for (int l = 0; l < static_cast<int>(labelled.size()); ++l) {
            const double dist = (detections[static_cast<std::size_t>(d)] - labelled[static_cast<std::size_t>(l)].second).norm();
            if (dist <= tolerance) pairs.emplace_back(dist, d, l);
        }
    }
    std::sort(pairs.begin(), pairs.end());
    std::set<int> used_d;
    std::set<int> used_l;
    std::map<int, int> out;
    for (const auto& [dist, d, l] : pairs) {
        if (used_d.count(d) || used_l.count(l)) continue;
        used_d.insert(d);
        used_l.insert(l);
        out[d] = labelled[static_cast<std::size_t>(l)].first;
    }
    return out;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of empty sample");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace slhsi
