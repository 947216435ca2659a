#include "hyperwave/fuchsian.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace hyperwave {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kQuantum = 1e-7;
constexpr double kTie = 1e-10;

const HPointd kI = HPointd::i();

// Normalized entries quantized at kQuantum. Lookups also probe the
// neighbouring cell for any entry that sits close to a cell boundary, so
// two roundings of the same element cannot land in different cells.
struct QuantKey {
    std::array<long long, 4> q;
    friend bool operator==(const QuantKey&, const QuantKey&) = default;
};

struct QuantHash {
    std::size_t operator()(const QuantKey& k) const {
        std::size_t h = 1469598103934665603ull;
        for (long long v : k.q) h = (h ^ static_cast<std::size_t>(v)) * 1099511628211ull;
        return h;
    }
};

class QuantSet {
public:
    bool contains(const Moebiusd& g) const {
        std::array<double, 4> scaled{g.a() / kQuantum, g.b() / kQuantum, g.c() / kQuantum, g.d() / kQuantum};
        QuantKey base;
        std::array<long long, 4> alt;
        int near = 0;
        for (int k = 0; k < 4; ++k) {
            base.q[k] = std::llround(scaled[k]);
            const double frac = scaled[k] - static_cast<double>(base.q[k]);
            alt[k] = std::abs(frac) > 0.4 ? base.q[k] + (frac > 0 ? 1 : -1) : base.q[k];
            if (alt[k] != base.q[k]) near |= 1 << k;
        }
        for (int mask = 0; mask < 16; ++mask) {
            if ((mask & near) != mask) continue;
            QuantKey probe = base;
            for (int k = 0; k < 4; ++k)
                if (mask & (1 << k)) probe.q[k] = alt[k];
            if (set_.count(probe)) return true;
        }
        return false;
    }
    // Returns false when the element was already present.
    bool insert(const Moebiusd& g) {
        if (contains(g)) return false;
        QuantKey key;
        key.q = {std::llround(g.a() / kQuantum), std::llround(g.b() / kQuantum),
                 std::llround(g.c() / kQuantum), std::llround(g.d() / kQuantum)};
        set_.insert(key);
        return true;
    }
    void clear() { set_.clear(); }
    std::size_t size() const { return set_.size(); }

private:
    std::unordered_set<QuantKey, QuantHash> set_;
};

bool lex_less(const Moebiusd& g, const Moebiusd& h) {
    const std::array<double, 4> a{g.a(), g.b(), g.c(), g.d()};
    const std::array<double, 4> b{h.a(), h.b(), h.c(), h.d()};
    return a < b;
}

// Dirichlet test against one element: 1 inside, -1 outside, and ties broken
// by comparing the element with its inverse.
int dirichlet_side(const Moebiusd& g, const HPointd& z, double dz) {
    const double diff = dist(kI, apply(g, z)) - dz;
    if (diff > kTie) return 1;
    if (diff < -kTie) return -1;
    return lex_less(g, g.inverse()) ? -1 : 1;
}

Word concat(const Word& a, const Word& b) {
    Word out = a;
    for (const auto& l : b) {
        if (!out.empty() && out.back().generator == l.generator && out.back().inverse != l.inverse)
            out.pop_back();
        else
            out.push_back(l);
    }
    return out;
}

// Group elements keyed by the image of a base point. The surface group acts
// freely, so distinct elements move the point at least a systole apart while
// two products for the same element differ by rounding only. Matrix entries
// would not do here: their rounding grows with the displacement.
class OrbitSet {
public:
    bool contains(const HPointd& z) const {
        for (const auto& key : probe_keys(z)) {
            const auto it = cells_.find(key);
            if (it == cells_.end()) continue;
            for (const auto& w : it->second)
                if (dist(z, w) < kSame) return true;
        }
        return false;
    }
    void insert(const HPointd& z) { cells_[key_of(z.x(), z.y())].push_back(z); }

private:
    static constexpr double kBand = 0.5;
    static constexpr double kSame = 1e-4;
    using Key = std::pair<long long, long long>;
    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            return static_cast<std::size_t>(k.first) * 1099511628211ull ^ static_cast<std::size_t>(k.second);
        }
    };
    static Key key_of(double x, double y) {
        const double band = std::floor(std::log(y) / kBand);
        const double width = kBand * std::exp(band * kBand);
        return {static_cast<long long>(band), static_cast<long long>(std::floor(x / width))};
    }
    static std::vector<Key> probe_keys(const HPointd& z) {
        std::vector<Key> keys;
        for (double sx : {-1.0, 1.0})
            for (double sy : {-1.0, 1.0}) {
                const Key k = key_of(z.x() + sx * kSame * z.y(), z.y() * std::exp(sy * kSame));
                if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
            }
        return keys;
    }
    std::unordered_map<Key, std::vector<HPointd>, KeyHash> cells_;
};

}  // namespace

Permutation identity_permutation(int degree) {
    Permutation p(degree);
    for (int s = 0; s < degree; ++s) p[s] = s;
    return p;
}

Permutation compose(const Permutation& p, const Permutation& q) {
    Permutation out(q.size());
    for (std::size_t s = 0; s < q.size(); ++s) out[s] = p[q[s]];
    return out;
}

Permutation invert(const Permutation& p) {
    Permutation out(p.size());
    for (std::size_t s = 0; s < p.size(); ++s) out[p[s]] = static_cast<int>(s);
    return out;
}

bool is_identity(const Permutation& p) {
    for (std::size_t s = 0; s < p.size(); ++s)
        if (p[s] != static_cast<int>(s)) return false;
    return true;
}

CoverElement operator*(const CoverElement& x, const CoverElement& y) {
    return {x.g * y.g, compose(x.perm, y.perm)};
}

CoverElement inverse(const CoverElement& x) { return {x.g.inverse(), invert(x.perm)}; }

bool is_trivial(const Moebiusd& g) {
    return (g.matrix() - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-8;
}

// ---------------------------------------------------------------- group

FuchsianGroup FuchsianGroup::from_generators(std::vector<std::string> labels,
                                             std::vector<Moebiusd> generators,
                                             const std::string& relator,
                                             const FuchsianOptions& opt) {
    if (labels.size() != generators.size() || generators.empty() || generators.size() % 2 != 0)
        throw InvalidGroup("need an even, nonzero number of labelled generators");
    for (const auto& l : labels) {
        if (l.empty() || !std::islower(static_cast<unsigned char>(l[0])))
            throw InvalidGroup("labels must start with a lowercase letter: '" + l + "'");
    }
    if (std::set<std::string>(labels.begin(), labels.end()).size() != labels.size())
        throw InvalidGroup("duplicate generator label");

    FuchsianGroup g;
    g.labels_ = std::move(labels);
    g.generators_ = std::move(generators);
    g.options_ = opt;
    g.relator_ = g.parse_word(relator);

    for (std::size_t k = 0; k < g.generators_.size(); ++k) {
        if (!(std::abs(g.generators_[k].trace()) > 2))
            throw InvalidGroup("generator " + g.labels_[k] + " is not hyperbolic");
    }
    const Moebiusd r = g.evaluate(g.relator_);
    if ((r.matrix() - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() > opt.relator_tolerance)
        throw RelatorViolated("relator does not evaluate to the identity");

    g.build_domain();
    return g;
}

double FuchsianGroup::volume() const { return 4 * kPi * (genus() - 1); }

Moebiusd FuchsianGroup::evaluate(const Word& w) const {
    Moebiusd out;
    for (const auto& l : w) out = out * (l.inverse ? generators_[l.generator].inverse() : generators_[l.generator]);
    return out;
}

int FuchsianGroup::label_index(const std::string& label) const {
    for (std::size_t k = 0; k < labels_.size(); ++k)
        if (labels_[k] == label) return static_cast<int>(k);
    return -1;
}

Word FuchsianGroup::parse_word(const std::string& text) const {
    Word w;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        int idx = label_index(tok);
        bool inv = false;
        if (idx < 0 && std::isupper(static_cast<unsigned char>(tok[0]))) {
            std::string lower = tok;
            lower[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(lower[0])));
            idx = label_index(lower);
            inv = true;
        }
        if (idx < 0) throw InvalidGroup("unknown letter '" + tok + "' in word");
        w.push_back({idx, inv});
    }
    return w;
}

std::string FuchsianGroup::format_word(const Word& w) const {
    std::string out;
    for (const auto& l : w) {
        if (!out.empty()) out += ' ';
        std::string s = labels_[l.generator];
        if (l.inverse) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
        out += s;
    }
    return out;
}

bool FuchsianGroup::in_domain(const HPointd& z) const {
    const double dz = dist(kI, z);
    for (const auto& n : neighbors_)
        if (dirichlet_side(n.g, z, dz) < 0) return false;
    return true;
}

void FuchsianGroup::build_domain() {
    // Start from the generators and close up under products until the
    // candidate set is stable; the boundary of D along each ray from i is
    // the first bisector crossed, which has the closed form
    // tanh r = tanh(rho/2) / cos(theta - phi) for an orbit point at polar
    // coordinates (rho, phi).
    std::vector<Neighbor> cand;
    QuantSet seen;
    for (std::size_t k = 0; k < generators_.size(); ++k) {
        for (bool inv : {false, true}) {
            Word w{{static_cast<int>(k), inv}};
            Moebiusd g = evaluate(w);
            if (seen.insert(g)) cand.push_back({g, w});
        }
    }
    const int rays = options_.domain_rays;
    constexpr double kUnboundedRadius = 8.0;
    std::vector<int> owner(rays);

    for (int iter = 0; iter < 32; ++iter) {
        std::vector<double> rho(cand.size()), phi(cand.size()), th(cand.size());
        for (std::size_t k = 0; k < cand.size(); ++k) {
            const auto p = point_to_polar(kI, kUpAngle<double>, apply(cand[k].g, kI));
            rho[k] = p.r;
            phi[k] = p.theta;
            th[k] = std::tanh(p.r / 2);
        }
        bool unbounded = false;
        double rmax = 0, area = 0;
        for (int j = 0; j < rays; ++j) {
            const double theta = 2 * kPi * j / rays;
            double best = kUnboundedRadius;
            int arg = -1;
            for (std::size_t k = 0; k < cand.size(); ++k) {
                const double c = std::cos(theta - phi[k]);
                if (c <= th[k]) continue;
                const double r = std::atanh(th[k] / c);
                if (r < best) {
                    best = r;
                    arg = static_cast<int>(k);
                }
            }
            if (arg < 0) unbounded = true;
            owner[j] = arg;
            rmax = std::max(rmax, best);
            area += (std::cosh(best) - 1) * 2 * kPi / rays;
        }
        // Ray sampling can miss the exact vertex by O(h sinh R); pad.
        domain_radius_ = rmax + 0.02;
        domain_area_ = area;
        const double reach = 2 * domain_radius_;

        std::vector<Neighbor> next;
        QuantSet next_seen;
        for (const auto& c : cand) {
            if (unbounded || displacement_at_i(c.g) <= reach) {
                next.push_back(c);
                next_seen.insert(c.g);
            }
        }
        const std::size_t kept = next.size();
        const std::size_t base_count = next.size();
        for (std::size_t a = 0; a < base_count; ++a) {
            const std::size_t limit = unbounded ? 2 * generators_.size() : base_count;
            for (std::size_t b = 0; b < limit && b < base_count; ++b) {
                const Moebiusd g = next[a].g * next[b].g;
                if (is_trivial(g)) continue;
                if (!unbounded && displacement_at_i(g) > reach) continue;
                if (!next_seen.insert(g)) continue;
                next.push_back({g, concat(next[a].word, next[b].word)});
            }
        }
        const bool stable = !unbounded && kept == cand.size() && next.size() == kept;
        cand = std::move(next);
        if (stable) break;
        if (cand.size() > 200000) throw InvalidGroup("Dirichlet domain bootstrap did not converge");
    }

    const double expected = volume();
    if (!(std::abs(domain_area_ - expected) <= options_.area_tolerance * expected))
        throw InvalidGroup("Dirichlet domain area " + std::to_string(domain_area_) +
                           " does not match 4 pi (g - 1) = " + std::to_string(expected));

    neighbors_ = std::move(cand);
    // A side pairing owns a run of rays; rays through a vertex can be owned
    // by a vertex neighbour, which is harmless. Close under inverses so the
    // breadth-first search runs on an undirected Cayley graph.
    std::set<int> sides(owner.begin(), owner.end());
    for (int k : std::set<int>(sides)) {
        for (std::size_t m = 0; m < neighbors_.size(); ++m)
            if (is_trivial(neighbors_[k].g * neighbors_[m].g)) sides.insert(static_cast<int>(m));
    }
    sides_.assign(sides.begin(), sides.end());
}

// ---------------------------------------------------------------- Bolza

Moebiusd bolza_side_pairing(int k) {
    const double s2 = std::sqrt(2.0);
    const double off = std::sqrt(2 + 2 * s2);
    const Moebiusd g0(1 + s2, off, off, 1 + s2);
    const Moebiusd r = rotation_about_i(k * kPi / 4);
    return r * g0 * r.inverse();
}

FuchsianGroup bolza_group(const FuchsianOptions& opt) {
    // The octagon pairings g0..g3 satisfy g0 g1^-1 g2 g3^-1 g0^-1 g1 g2^-1 g3 = 1;
    // this basis turns that relation into the product of two commutators.
    const Moebiusd g0 = bolza_side_pairing(0), g1 = bolza_side_pairing(1);
    const Moebiusd g2 = bolza_side_pairing(2), g3 = bolza_side_pairing(3);
    std::vector<Moebiusd> gens{g0, g3, g2 * g1.inverse(), g0 * g3 * g1.inverse()};
    return FuchsianGroup::from_generators({"a1", "b1", "a2", "b2"}, std::move(gens),
                                          "a1 b1 A1 B1 a2 b2 A2 B2", opt);
}

// ---------------------------------------------------------------- covers

CoverDescriptor CoverDescriptor::trivial(std::shared_ptr<const FuchsianGroup> base) {
    return make(std::move(base), {});
}

CoverDescriptor CoverDescriptor::make(std::shared_ptr<const FuchsianGroup> base,
                                      const std::map<std::string, Permutation>& perms) {
    if (!base) throw InvalidArgument("cover needs a base group");
    CoverDescriptor c;
    c.base_ = std::move(base);
    int degree = 0;
    for (const auto& [label, p] : perms) {
        if (c.base_->label_index(label) < 0) throw InvalidGroup("unknown generator label '" + label + "'");
        if (degree == 0) degree = static_cast<int>(p.size());
        if (static_cast<int>(p.size()) != degree || degree == 0)
            throw InvalidGroup("permutations have inconsistent degrees");
        std::vector<bool> hit(degree, false);
        for (int v : p) {
            if (v < 0 || v >= degree || hit[v]) throw InvalidGroup("'" + label + "' is not a permutation");
            hit[v] = true;
        }
    }
    c.degree_ = std::max(degree, 1);
    c.perms_.assign(c.base_->generators().size(), identity_permutation(c.degree_));
    for (const auto& [label, p] : perms) c.perms_[c.base_->label_index(label)] = p;
    c.finish();
    return c;
}

CoverDescriptor CoverDescriptor::cyclic(std::shared_ptr<const FuchsianGroup> base, int m) {
    if (m < 1) throw InvalidArgument("cyclic cover degree must be >= 1");
    Permutation shift(m);
    for (int s = 0; s < m; ++s) shift[s] = (s + 1) % m;
    const std::string first = base->labels().front();
    return make(std::move(base), {{first, shift}});
}

CoverDescriptor CoverDescriptor::regular(std::shared_ptr<const FuchsianGroup> base,
                                         const Permutation& g, const Permutation& h) {
    if (base->labels().size() != 4) throw InvalidArgument("regular covers are defined for genus 2 bases");
    if (g.size() != h.size() || g.empty()) throw InvalidArgument("g and h must act on the same set");
    std::map<Permutation, int> index;
    std::vector<Permutation> elems{identity_permutation(static_cast<int>(g.size()))};
    index[elems[0]] = 0;
    for (std::size_t k = 0; k < elems.size(); ++k) {
        for (const auto* x : {&g, &h}) {
            Permutation e = compose(*x, elems[k]);
            if (!index.count(e)) {
                index[e] = static_cast<int>(elems.size());
                elems.push_back(std::move(e));
            }
        }
    }
    auto left_action = [&](const Permutation& x) {
        Permutation p(elems.size());
        for (std::size_t k = 0; k < elems.size(); ++k) p[k] = index.at(compose(x, elems[k]));
        return p;
    };
    const Permutation pg = left_action(g), ph = left_action(h);
    const auto& l = base->labels();
    return make(std::move(base), {{l[0], pg}, {l[1], ph}, {l[2], ph}, {l[3], pg}});
}

Permutation CoverDescriptor::word_perm(const Word& w) const {
    Permutation out = identity_permutation(degree_);
    for (const auto& l : w) {
        const Permutation& p = perms_[l.generator];
        out = compose(out, l.inverse ? invert(p) : p);
    }
    return out;
}

CoverElement CoverDescriptor::element(const Word& w) const { return {base_->evaluate(w), word_perm(w)}; }

void CoverDescriptor::finish() {
    if (!is_identity(word_perm(base_->relator())))
        throw RelatorViolated("relator permutation is not the identity");
    std::vector<bool> reached(degree_, false);
    std::vector<int> stack{0};
    reached[0] = true;
    while (!stack.empty()) {
        const int s = stack.back();
        stack.pop_back();
        for (const auto& p : perms_) {
            for (int v : {p[s], invert(p)[s]}) {
                if (!reached[v]) {
                    reached[v] = true;
                    stack.push_back(v);
                }
            }
        }
    }
    if (std::find(reached.begin(), reached.end(), false) != reached.end())
        throw NotTransitive("permutation action is not transitive");
    neighbors_.clear();
    for (const auto& n : base_->neighbors()) neighbors_.push_back({n.g, word_perm(n.word)});
}

// ---------------------------------------------------------------- orbits

Reduction reduce_to_domain(const CoverDescriptor& cover, const HPointd& z) {
    CoverElement acc{Moebiusd(), identity_permutation(cover.degree())};
    HPointd cur = z;
    for (int step = 0; step < 100000; ++step) {
        const double d0 = dist(kI, cur);
        double best = d0;
        int arg = -1;
        const auto& ns = cover.neighbors();
        for (std::size_t k = 0; k < ns.size(); ++k) {
            const double d = dist(kI, apply(ns[k].g, cur));
            if (d < best - 1e-12) {
                best = d;
                arg = static_cast<int>(k);
            }
        }
        if (arg < 0) break;
        cur = apply(ns[arg].g, cur);
        acc = ns[arg] * acc;
    }
    // Boundary points: move to the twin selected by the tie-break.
    const double dz = dist(kI, cur);
    for (const auto& n : cover.neighbors()) {
        if (dirichlet_side(n.g, cur, dz) < 0) {
            cur = apply(n.g, cur);
            acc = n * acc;
            break;
        }
    }
    return {cur, inverse(acc)};
}

SurfacePoint reduce_to_domain(const CoverDescriptor& cover, const SurfacePoint& p) {
    const Reduction r = reduce_to_domain(cover, p.z);
    return {r.point, invert(r.to_original.perm)[p.sheet]};
}

std::size_t LatticeBall::count_between(int sheet_x, int sheet_y) const {
    std::size_t n = 0;
    for (const auto& e : elements)
        if (e.perm[sheet_y] == sheet_x) ++n;
    return n;
}

LatticeBall enumerate_ball(const CoverDescriptor& cover, const HPointd& x, const HPointd& y, double t) {
    if (!(t >= 0)) throw InvalidArgument("enumerate_ball requires t >= 0");
    const FuchsianGroup& base = cover.base();
    if (t > base.options().enumeration_cap)
        throw CapExceeded("radius " + std::to_string(t) + " above the enumeration cap " +
                          std::to_string(base.options().enumeration_cap));

    const Reduction rx = reduce_to_domain(cover, x);
    const Reduction ry = reduce_to_domain(cover, y);
    const HPointd x0 = rx.point, y0 = ry.point;
    // A tile g D meeting the geodesic from x0 to g' y0 at distance <= t from
    // x0 has d(x0, g y0) <= t + R_D + d(i, y0), and consecutive tiles along
    // the geodesic differ by a side pairing.
    const double prune = t + base.domain_radius() + dist(kI, y0) + 1e-9;
    const double keep = t + 1e-9;

    std::vector<CoverElement> sides;
    for (int k : base.side_indices()) sides.push_back(cover.neighbors()[k]);

    const CoverElement gy_inv = inverse(ry.to_original);
    LatticeBall ball;
    ball.x = x;
    ball.y = y;
    ball.t = t;
    auto collect = [&](const CoverElement& e, double d_reduced) {
        if (d_reduced > keep) return;
        CoverElement g = rx.to_original * e * gy_inv;
        const double d = dist(x, apply(g.g, y));
        if (d <= t) {
            ball.elements.push_back(std::move(g));
            ball.distances.push_back(d);
        }
    };

    // Breadth-first layers of the side-pairing Cayley graph restricted to the
    // pruning ball; neighbours of layer k lie in layers k-1..k+1, so three
    // layers of visited keys suffice.
    OrbitSet prev, curr, next;
    std::vector<CoverElement> frontier{{Moebiusd(), identity_permutation(cover.degree())}};
    curr.insert(y0);
    collect(frontier[0], dist(x0, y0));
    while (!frontier.empty()) {
        std::vector<CoverElement> upcoming;
        for (const auto& e : frontier) {
            for (const auto& s : sides) {
                CoverElement n = e * s;
                const HPointd image = apply(n.g, y0);
                if (prev.contains(image) || curr.contains(image) || next.contains(image)) continue;
                next.insert(image);
                const double d = dist(x0, image);
                if (d > prune) continue;
                collect(n, d);
                upcoming.push_back(std::move(n));
            }
        }
        prev = std::move(curr);
        curr = std::move(next);
        next = OrbitSet();
        frontier = std::move(upcoming);
    }
    return ball;
}

LatticeBall enumerate_ball(const FuchsianGroup& group, const HPointd& x, const HPointd& y, double t) {
    // Non-owning handle: the descriptor does not outlive this call.
    auto handle = std::shared_ptr<const FuchsianGroup>(&group, [](const FuchsianGroup*) {});
    return enumerate_ball(CoverDescriptor::trivial(handle), x, y, t);
}

LatticeBall enumerate_ball_by_words(const CoverDescriptor& cover, const HPointd& x, const HPointd& y,
                                    double t, int max_length) {
    const FuchsianGroup& base = cover.base();
    const int n = static_cast<int>(base.generators().size());
    struct Node {
        CoverElement e;
        Letter last;
    };
    std::vector<CoverElement> letters;
    std::vector<Letter> letter_ids;
    for (int k = 0; k < n; ++k) {
        for (bool inv : {false, true}) {
            letters.push_back(cover.element({{k, inv}}));
            letter_ids.push_back({k, inv});
        }
    }
    LatticeBall ball;
    ball.x = x;
    ball.y = y;
    ball.t = t;
    QuantSet seen;
    auto visit = [&](const CoverElement& e) {
        if (!seen.insert(e.g)) return;
        const double d = dist(x, apply(e.g, y));
        if (d <= t) {
            ball.elements.push_back(e);
            ball.distances.push_back(d);
        }
    };
    std::vector<Node> layer{{{Moebiusd(), identity_permutation(cover.degree())}, {-1, false}}};
    visit(layer[0].e);
    for (int len = 1; len <= max_length; ++len) {
        std::vector<Node> upcoming;
        for (const auto& node : layer) {
            for (std::size_t k = 0; k < letters.size(); ++k) {
                const Letter l = letter_ids[k];
                if (node.last.generator == l.generator && node.last.inverse != l.inverse) continue;
                Node m{node.e * letters[k], l};
                visit(m.e);
                upcoming.push_back(std::move(m));
            }
        }
        layer = std::move(upcoming);
    }
    return ball;
}

double injectivity_radius(const CoverDescriptor& cover, const SurfacePoint& p) {
    const double cap = cover.base().options().enumeration_cap;
    for (double t = 1;; t = std::min(2 * t, cap)) {
        const LatticeBall ball = enumerate_ball(cover, p.z, p.z, t);
        double best = kUnreachable;
        for (std::size_t k = 0; k < ball.size(); ++k) {
            const auto& e = ball.elements[k];
            if (e.perm[p.sheet] == p.sheet && !is_trivial(e.g)) best = std::min(best, ball.distances[k]);
        }
        if (best < kUnreachable) return best / 2;
        if (t >= cap) throw CapExceeded("no nontrivial element within the enumeration cap");
    }
}

double injectivity_radius(const FuchsianGroup& group, const HPointd& z) {
    auto handle = std::shared_ptr<const FuchsianGroup>(&group, [](const FuchsianGroup*) {});
    return injectivity_radius(CoverDescriptor::trivial(handle), SurfacePoint{z, 0});
}

double systole(const CoverDescriptor& cover) {
    // Every closed geodesic has a representative whose axis meets D, and
    // such a representative moves i by at most length + 2 R_D.
    const double rd = cover.base().domain_radius();
    const double cap = cover.base().options().enumeration_cap;
    for (double rho = std::min(2 * rd + 4, cap);;) {
        const LatticeBall ball = enumerate_ball(cover, kI, kI, rho);
        double best = kUnreachable;
        for (const auto& e : ball.elements) {
            if (is_trivial(e.g)) continue;
            bool fixes = false;
            for (int s = 0; s < cover.degree() && !fixes; ++s) fixes = e.perm[s] == s;
            if (fixes) best = std::min(best, 2 * std::acosh(std::abs(e.g.trace()) / 2));
        }
        if (best + 2 * rd <= rho) return best;
        if (rho >= cap) throw CapExceeded("systole not certified within the enumeration cap");
        rho = std::min(cap, best < kUnreachable ? best + 2 * rd : 2 * rho);
    }
}

bool dirichlet_domain_membership(const FuchsianGroup& group, const HPointd& z,
                                 std::optional<double> probe_radius) {
    const double dz = dist(kI, z);
    if (!probe_radius) return group.in_domain(z);
    const LatticeBall ball = enumerate_ball(group, kI, kI, *probe_radius);
    for (const auto& e : ball.elements) {
        if (is_trivial(e.g)) continue;
        if (dirichlet_side(e.g, z, dz) < 0) return false;
    }
    return true;
}

double quotient_dist(const CoverDescriptor& cover, const SurfacePoint& p, const SurfacePoint& q,
                     double cutoff) {
    const LatticeBall ball = enumerate_ball(cover, p.z, q.z, cutoff);
    double best = kUnreachable;
    for (std::size_t k = 0; k < ball.size(); ++k)
        if (ball.elements[k].perm[q.sheet] == p.sheet) best = std::min(best, ball.distances[k]);
    return best;
}

QuotientMetric::QuotientMetric(const CoverDescriptor& cover, double cutoff) : cutoff_(cutoff) {
    const LatticeBall ball = enumerate_ball(cover, kI, kI, 2 * cover.base().domain_radius() + cutoff);
    elements_ = ball.elements;
}

double QuotientMetric::operator()(const SurfacePoint& p, const SurfacePoint& q) const {
    double best = kUnreachable;
    for (const auto& e : elements_) {
        if (e.perm[q.sheet] != p.sheet) continue;
        const double d = dist(p.z, apply(e.g, q.z));
        if (d <= cutoff_) best = std::min(best, d);
    }
    return best;
}

SurfacePoint sample_domain_point(const CoverDescriptor& cover, std::mt19937_64& rng) {
    const FuchsianGroup& base = cover.base();
    const double rd = base.domain_radius();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> sheet(0, cover.degree() - 1);
    for (;;) {
        // Hyperbolic-uniform in the disc of radius R_D about i, then reject.
        const double r = std::acosh(1 + unit(rng) * (std::cosh(rd) - 1));
        const double theta = 2 * kPi * unit(rng);
        const HPointd z = polar_to_point(kI, kUpAngle<double>, r, theta);
        if (base.in_domain(z)) return {z, sheet(rng)};
    }
}

MonteCarloEstimate thin_part_volume_fraction(const CoverDescriptor& cover, double threshold, int samples,
                                             std::uint64_t seed) {
    if (!(threshold >= 0) || samples < 1) throw InvalidArgument("thin_part_volume_fraction arguments");
    MonteCarloEstimate out;
    out.samples = samples;
    const FuchsianGroup& base = cover.base();
    const double rd = base.domain_radius();
    const double cap = base.options().enumeration_cap;

    if (threshold < systole(cover) / 2) return out;

    // Elements acting trivially on the sheets bound InjRad everywhere by
    // R_D + d(i, g i) / 2.
    for (double rho : {4.0, 8.0, cap}) {
        const LatticeBall ball = enumerate_ball(cover, kI, kI, std::min(rho, cap));
        double best = kUnreachable;
        for (std::size_t k = 0; k < ball.size(); ++k)
            if (is_identity(ball.elements[k].perm) && !is_trivial(ball.elements[k].g))
                best = std::min(best, ball.distances[k]);
        if (best < kUnreachable) {
            if (threshold >= rd + best / 2) {
                out.value = 1;
                return out;
            }
            break;
        }
    }

    const double reach = 2 * rd + 2 * threshold;
    if (reach > cap) throw CapExceeded("thin-part threshold needs a ball beyond the enumeration cap");
    const LatticeBall ball = enumerate_ball(cover, kI, kI, reach);
    std::vector<std::size_t> nontrivial;
    for (std::size_t k = 0; k < ball.size(); ++k)
        if (!is_trivial(ball.elements[k].g)) nontrivial.push_back(k);

    std::mt19937_64 rng(seed);
    int thin = 0;
    for (int n = 0; n < samples; ++n) {
        const SurfacePoint p = sample_domain_point(cover, rng);
        const double dz = dist(kI, p.z);
        for (std::size_t k : nontrivial) {
            const auto& e = ball.elements[k];
            if (e.perm[p.sheet] != p.sheet) continue;
            if (ball.distances[k] - 2 * dz > 2 * threshold) continue;
            if (dist(p.z, apply(e.g, p.z)) <= 2 * threshold) {
                ++thin;
                break;
            }
        }
    }
    out.value = static_cast<double>(thin) / samples;
    out.stderr_ = std::sqrt(out.value * (1 - out.value) / samples);
    return out;
}

// ---------------------------------------------------------------- JSON

nlohmann::json surface_to_json(const CoverDescriptor& cover) {
    const FuchsianGroup& base = cover.base();
    nlohmann::json j;
    j["generators"] = nlohmann::json::array();
    for (const auto& g : base.generators()) j["generators"].push_back({g.a(), g.b(), g.c(), g.d()});
    j["labels"] = base.labels();
    j["relator"] = base.relator_string();
    nlohmann::json perm = nlohmann::json::object();
    for (std::size_t k = 0; k < base.labels().size(); ++k) perm[base.labels()[k]] = cover.generator_perm(k);
    j["cover"] = {{"degree", cover.degree()}, {"perm", perm}};
    return j;
}

CoverDescriptor surface_from_json(const nlohmann::json& j, const FuchsianOptions& opt) {
    try {
        std::vector<Moebiusd> gens;
        for (const auto& e : j.at("generators")) {
            if (e.size() != 4) throw InvalidGroup("generator entries must have four numbers");
            gens.emplace_back(e[0].get<double>(), e[1].get<double>(), e[2].get<double>(), e[3].get<double>());
        }
        auto labels = j.at("labels").get<std::vector<std::string>>();
        auto base = std::make_shared<const FuchsianGroup>(
            FuchsianGroup::from_generators(labels, std::move(gens), j.at("relator").get<std::string>(), opt));
        std::map<std::string, Permutation> perms;
        if (j.contains("cover")) {
            const auto& c = j.at("cover");
            for (const auto& [label, images] : c.at("perm").items()) perms[label] = images.get<Permutation>();
            const int degree = c.at("degree").get<int>();
            for (const auto& [label, p] : perms)
                if (static_cast<int>(p.size()) != degree)
                    throw InvalidGroup("cover.perm." + label + " does not match cover.degree");
        }
        return CoverDescriptor::make(std::move(base), perms);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidGroup(std::string("malformed surface file: ") + e.what());
    }
}

// ---------------------------------------------------------------- cache

namespace {

std::string ball_key(const CoverDescriptor& cover, const HPointd& x, const HPointd& y, double t) {
    std::string s;
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g,", v);
        s += buf;
    };
    for (const auto& g : cover.base().generators()) {
        put(g.a());
        put(g.b());
        put(g.c());
        put(g.d());
    }
    for (std::size_t k = 0; k < cover.base().generators().size(); ++k)
        for (int v : cover.generator_perm(k)) s += std::to_string(v) + ",";
    put(x.x());
    put(x.y());
    put(y.x());
    put(y.y());
    put(t);
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

nlohmann::json ball_to_json(const LatticeBall& b) {
    nlohmann::json j;
    j["x"] = {b.x.x(), b.x.y()};
    j["y"] = {b.y.x(), b.y.y()};
    j["t"] = b.t;
    auto& el = j["elements"] = nlohmann::json::array();
    for (std::size_t k = 0; k < b.size(); ++k) {
        const auto& e = b.elements[k];
        el.push_back({{"m", {e.g.a(), e.g.b(), e.g.c(), e.g.d()}}, {"perm", e.perm}, {"d", b.distances[k]}});
    }
    return j;
}

LatticeBall ball_from_json(const nlohmann::json& j) {
    LatticeBall b;
    b.x = HPointd(j["x"][0].get<double>(), j["x"][1].get<double>());
    b.y = HPointd(j["y"][0].get<double>(), j["y"][1].get<double>());
    b.t = j["t"].get<double>();
    for (const auto& e : j["elements"]) {
        const auto& m = e["m"];
        b.elements.push_back({Moebiusd(m[0].get<double>(), m[1].get<double>(), m[2].get<double>(),
                                       m[3].get<double>()),
                              e["perm"].get<Permutation>()});
        b.distances.push_back(e["d"].get<double>());
    }
    return b;
}

}  // namespace

std::shared_ptr<const LatticeBall> cached_enumerate_ball(const CoverDescriptor& cover, const HPointd& x,
                                                         const HPointd& y, double t) {
    static std::shared_mutex mutex;
    static std::unordered_map<std::string, std::shared_ptr<const LatticeBall>> memo;
    const std::string key = ball_key(cover, x, y, t);
    {
        std::shared_lock lock(mutex);
        if (auto it = memo.find(key); it != memo.end()) return it->second;
    }
    std::shared_ptr<const LatticeBall> ball;
    std::filesystem::path file;
    if (const char* dir = std::getenv("HYPERWAVE_CACHE"); dir && *dir) {
        file = std::filesystem::path(dir) / ("ball-" + key + ".json");
        std::ifstream in(file);
        if (in) {
            try {
                ball = std::make_shared<const LatticeBall>(ball_from_json(nlohmann::json::parse(in)));
            } catch (const std::exception&) {
                ball.reset();
            }
        }
    }
    if (!ball) {
        ball = std::make_shared<const LatticeBall>(enumerate_ball(cover, x, y, t));
        if (!file.empty()) {
            std::error_code ec;
            std::filesystem::create_directories(file.parent_path(), ec);
            const auto tmp = file.string() + ".tmp";
            std::ofstream(tmp) << ball_to_json(*ball).dump();
            std::filesystem::rename(tmp, file, ec);
        }
    }
    std::unique_lock lock(mutex);
    return memo.emplace(key, ball).first->second;
}

}  // namespace hyperwave
