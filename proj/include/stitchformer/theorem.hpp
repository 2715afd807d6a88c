#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace stitchformer {

// Finite trajectory space: all (num_states * num_actions)^horizon step
// sequences in lexicographic order. Small enough to sum exactly.
struct DiscreteTrajectorySpace {
    int num_states = 2;
    int num_actions = 2;
    int horizon = 2;

    std::int64_t num_trajectories() const;
    void validate() const;  // enforces the 1e6 enumeration cap
};

// Per-trajectory probability tables of the expert and behavior policies.
struct DensityPair {
    std::vector<double> p_star;
    std::vector<double> p_hat;

    void validate(const DiscreteTrajectorySpace& space) const;
};

using EmbeddingTable = std::vector<std::vector<double>>;  // one vector per trajectory

// Expectation form of the contextual objective as an exact finite sum:
// lambda1 * sum P*(t)||z - I(t)||  -  lambda2 * sum P^(t)||z - I(t)||.
double lhs_expectation(const DiscreteTrajectorySpace& space, const DensityPair& densities,
                       const EmbeddingTable& embeddings, const std::vector<double>& z,
                       double lambda1, double lambda2);

// Split of the same sum by the sign of (lambda1 P* - lambda2 P^): term1 over
// trajectories where it is >= 0, term2 over the rest. Boundary ties go to
// term1 only; they contribute zero either way.
struct Decomposition {
    double term1 = 0.0;  // >= 0
    double term2 = 0.0;  // <= 0
};
Decomposition rhs_decomposition(const DiscreteTrajectorySpace& space, const DensityPair& densities,
                                const EmbeddingTable& embeddings, const std::vector<double>& z,
                                double lambda1, double lambda2);

struct TheoremReport {
    int instances = 0;
    double max_abs_error = 0.0;
    bool sign_structure_ok = true;
    bool pass = false;
    std::uint64_t seed = 0;
};

// Random-instance sweep of the equality lhs == term1 + term2 on |S|=|A|=2,
// T=2 spaces with 2-d embeddings. Passes iff the worst discrepancy is
// <= 1e-9 and the sign structure holds everywhere.
TheoremReport check_theorem(int instances, std::uint64_t seed);

std::string theorem_report_json(const TheoremReport& report);

// Instance sampler pieces, exposed for tests.
std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n);

}  // namespace stitchformer
