#pragma once

// Fuchsian surface groups, their finite covers given by permutation
// representations, and the orbit machinery built on top: lattice balls,
// Dirichlet domains, injectivity radii and quotient distances.

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyperwave/hypgeo.hpp"

namespace hyperwave {

struct Letter {
    int generator = 0;
    bool inverse = false;
    friend bool operator==(const Letter&, const Letter&) = default;
};
using Word = std::vector<Letter>;

/// Images of 0..m-1; composition follows (p * q)(s) = p(q(s)).
using Permutation = std::vector<int>;

Permutation identity_permutation(int degree);
Permutation compose(const Permutation& p, const Permutation& q);
Permutation invert(const Permutation& p);
bool is_identity(const Permutation& p);

/// Group element of the base surface together with its permutation of the
/// cover sheets.
struct CoverElement {
    Moebiusd g;
    Permutation perm;
};

CoverElement operator*(const CoverElement& x, const CoverElement& y);
CoverElement inverse(const CoverElement& x);
bool is_trivial(const Moebiusd& g);

struct FuchsianOptions {
    double enumeration_cap = 14.0;   // hard radius cap for lattice balls
    double relator_tolerance = 1e-8;
    double area_tolerance = 2e-3;    // relative check of the domain area against Gauss-Bonnet
    int domain_rays = 8192;
};

/// Closed surface group given by labelled hyperbolic generators and one
/// relator. Construction derives the Dirichlet domain at i: the set of
/// nontrivial elements adjacent to it and its circumradius.
class FuchsianGroup {
public:
    struct Neighbor {
        Moebiusd g;
        Word word;
    };

    static FuchsianGroup from_generators(std::vector<std::string> labels,
                                         std::vector<Moebiusd> generators,
                                         const std::string& relator,
                                         const FuchsianOptions& opt = {});

    const std::vector<std::string>& labels() const { return labels_; }
    const std::vector<Moebiusd>& generators() const { return generators_; }
    const Word& relator() const { return relator_; }
    std::string relator_string() const { return format_word(relator_); }
    const FuchsianOptions& options() const { return options_; }

    int genus() const { return static_cast<int>(generators_.size()) / 2; }
    double volume() const;

    Moebiusd evaluate(const Word& w) const;
    Word parse_word(const std::string& text) const;
    std::string format_word(const Word& w) const;
    int label_index(const std::string& label) const;

    /// Elements g != id with d(i, g i) <= 2 * domain_radius: every tile of
    /// the Dirichlet tessellation touching D is g D for one of these.
    const std::vector<Neighbor>& neighbors() const { return neighbors_; }
    /// Indices into neighbors() of the side pairings of D.
    const std::vector<int>& side_indices() const { return sides_; }
    /// sup over the Dirichlet domain of d(i, z).
    double domain_radius() const { return domain_radius_; }
    /// Area of the Dirichlet domain by polar integration of its boundary.
    double domain_area() const { return domain_area_; }

    /// Strict membership with the deterministic tie-break on the boundary.
    bool in_domain(const HPointd& z) const;

private:
    FuchsianGroup() = default;
    void build_domain();

    std::vector<std::string> labels_;
    std::vector<Moebiusd> generators_;
    Word relator_;
    FuchsianOptions options_;
    std::vector<Neighbor> neighbors_;
    std::vector<int> sides_;
    double domain_radius_ = 0;
    double domain_area_ = 0;
};

/// Genus-2 Bolza surface: side pairings of the regular octagon built from
/// [[1+sqrt2, sqrt(2+2sqrt2)], [sqrt(2+2sqrt2), 1+sqrt2]] conjugated by
/// rotations about i through multiples of pi/4, relabelled into a
/// symplectic basis a1 b1 a2 b2.
FuchsianGroup bolza_group(const FuchsianOptions& opt = {});

/// The octagon side pairing conjugated by a rotation through k pi/4.
Moebiusd bolza_side_pairing(int k);

/// Finite cover of a base surface. Sheet s of point z denotes the orbit of
/// (z, s) under g.(z, s) = (g z, perm_g(s)).
class CoverDescriptor {
public:
    static CoverDescriptor trivial(std::shared_ptr<const FuchsianGroup> base);
    static CoverDescriptor make(std::shared_ptr<const FuchsianGroup> base,
                                const std::map<std::string, Permutation>& perms);
    /// Z/m cover: a1 -> s+1 mod m, other generators trivial.
    static CoverDescriptor cyclic(std::shared_ptr<const FuchsianGroup> base, int m);
    /// Regular cover for the group G = <g, h> acting on itself:
    /// a1 -> g, b1 -> h, a2 -> h, b2 -> g.
    static CoverDescriptor regular(std::shared_ptr<const FuchsianGroup> base,
                                   const Permutation& g, const Permutation& h);

    const FuchsianGroup& base() const { return *base_; }
    std::shared_ptr<const FuchsianGroup> base_ptr() const { return base_; }
    int degree() const { return degree_; }
    int genus() const { return degree_ * (base_->genus() - 1) + 1; }
    double volume() const { return degree_ * base_->volume(); }

    const Permutation& generator_perm(int k) const { return perms_[k]; }
    Permutation word_perm(const Word& w) const;
    CoverElement element(const Word& w) const;
    /// Neighbor elements of the base domain with their sheet permutations.
    const std::vector<CoverElement>& neighbors() const { return neighbors_; }

private:
    CoverDescriptor() = default;
    void finish();

    std::shared_ptr<const FuchsianGroup> base_;
    int degree_ = 1;
    std::vector<Permutation> perms_;
    std::vector<CoverElement> neighbors_;
};

struct SurfacePoint {
    HPointd z;
    int sheet = 0;
};

/// Move z into the closed Dirichlet domain: returns (z0, g) with z = g z0.
struct Reduction {
    HPointd point;
    CoverElement to_original;
};
Reduction reduce_to_domain(const CoverDescriptor& cover, const HPointd& z);
SurfacePoint reduce_to_domain(const CoverDescriptor& cover, const SurfacePoint& p);

struct LatticeBall {
    HPointd x, y;
    double t = 0;
    std::vector<CoverElement> elements;
    std::vector<double> distances;   // d(x, g y), aligned with elements

    std::size_t size() const { return elements.size(); }
    /// Elements of the cover group: those carrying sheet_y to sheet_x.
    std::size_t count_between(int sheet_x, int sheet_y) const;
};

/// All g with d(x, g y) <= t. Breadth-first over right multiplication by the
/// domain neighbors with a tile-based pruning radius.
LatticeBall enumerate_ball(const CoverDescriptor& cover, const HPointd& x, const HPointd& y, double t);
LatticeBall enumerate_ball(const FuchsianGroup& group, const HPointd& x, const HPointd& y, double t);

/// enumerate_ball behind a process-wide read-mostly map. When the
/// HYPERWAVE_CACHE environment variable names a directory, balls are also
/// persisted there as JSON keyed by a hash of the inputs.
std::shared_ptr<const LatticeBall> cached_enumerate_ball(const CoverDescriptor& cover, const HPointd& x,
                                                         const HPointd& y, double t);

/// Unpruned reference: every reduced word over the labelled generators of
/// length <= max_length, filtered by distance. Exponential; tests only.
LatticeBall enumerate_ball_by_words(const CoverDescriptor& cover, const HPointd& x,
                                    const HPointd& y, double t, int max_length);

double injectivity_radius(const CoverDescriptor& cover, const SurfacePoint& p);
double injectivity_radius(const FuchsianGroup& group, const HPointd& z);

/// Length of the shortest closed geodesic; the global injectivity radius is
/// half of it.
double systole(const CoverDescriptor& cover);

/// Dirichlet membership at i against all nontrivial elements in a probe ball.
bool dirichlet_domain_membership(const FuchsianGroup& group, const HPointd& z,
                                 std::optional<double> probe_radius = std::nullopt);

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

/// Distance on the quotient X = Gamma_cover \ H, or kUnreachable when no
/// element within `cutoff` connects the two points.
double quotient_dist(const CoverDescriptor& cover, const SurfacePoint& p, const SurfacePoint& q,
                     double cutoff);

/// Precomputed orbit data for repeated quotient distances between points
/// already reduced into the domain.
class QuotientMetric {
public:
    QuotientMetric(const CoverDescriptor& cover, double cutoff);
    double operator()(const SurfacePoint& p, const SurfacePoint& q) const;
    double cutoff() const { return cutoff_; }
    const std::vector<CoverElement>& elements() const { return elements_; }

private:
    double cutoff_;
    std::vector<CoverElement> elements_;
};

struct MonteCarloEstimate {
    double value = 0;
    double stderr_ = 0;
    int samples = 0;
};

/// Uniform point of the domain (hyperbolic area) on a uniform sheet.
SurfacePoint sample_domain_point(const CoverDescriptor& cover, std::mt19937_64& rng);

MonteCarloEstimate thin_part_volume_fraction(const CoverDescriptor& cover, double threshold,
                                             int samples, std::uint64_t seed);

/// Surface definition file: generators, labels, relator and optional cover.
nlohmann::json surface_to_json(const CoverDescriptor& cover);
CoverDescriptor surface_from_json(const nlohmann::json& j, const FuchsianOptions& opt = {});

}  // namespace hyperwave
