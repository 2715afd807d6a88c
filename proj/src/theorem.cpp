#include "stitchformer/theorem.hpp"

#include <cmath>
#include <sstream>

#include "stitchformer/errors.hpp"

namespace stitchformer {

namespace {

constexpr std::int64_t kEnumerationCap = 1000000;
constexpr double kDensityTolerance = 1e-12;
constexpr double kEqualityTolerance = 1e-9;

double distance(const std::vector<double>& z, const std::vector<double>& embedding) {
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = z[i] - embedding[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

void validate_inputs(const DiscreteTrajectorySpace& space, const DensityPair& densities,
                     const EmbeddingTable& embeddings, const std::vector<double>& z) {
    space.validate();
    densities.validate(space);
    if (static_cast<std::int64_t>(embeddings.size()) != space.num_trajectories()) {
        throw ContractError("embedding table covers " + std::to_string(embeddings.size()) +
                            " trajectories, space has " + std::to_string(space.num_trajectories()));
    }
    for (const auto& e : embeddings) {
        if (e.size() != z.size()) {
            throw ContractError("embedding dim " + std::to_string(e.size()) +
                                " does not match z dim " + std::to_string(z.size()));
        }
    }
}

}  // namespace

std::int64_t DiscreteTrajectorySpace::num_trajectories() const {
    std::int64_t n = 1;
    const std::int64_t per_step = static_cast<std::int64_t>(num_states) * num_actions;
    for (int t = 0; t < horizon; ++t) n *= per_step;
    return n;
}

void DiscreteTrajectorySpace::validate() const {
    if (num_states < 1 || num_actions < 1 || horizon < 1) {
        throw ContractError("trajectory space dims must be >= 1");
    }
    std::int64_t n = 1;
    const std::int64_t per_step = static_cast<std::int64_t>(num_states) * num_actions;
    for (int t = 0; t < horizon; ++t) {
        n *= per_step;
        if (n > kEnumerationCap) {
            throw ContractError("trajectory space exceeds the enumeration cap of 1e6");
        }
    }
}

void DensityPair::validate(const DiscreteTrajectorySpace& space) const {
    const std::int64_t n = space.num_trajectories();
    if (static_cast<std::int64_t>(p_star.size()) != n || static_cast<std::int64_t>(p_hat.size()) != n) {
        throw ContractError("density table length mismatch: expected " + std::to_string(n));
    }
    for (const auto* table : {&p_star, &p_hat}) {
        double sum = 0.0;
        for (double p : *table) {
            if (p < 0.0) throw ContractError("density entries must be non-negative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > kDensityTolerance) {
            throw ContractError("density table sums to " + std::to_string(sum) + ", expected 1");
        }
    }
}

double lhs_expectation(const DiscreteTrajectorySpace& space, const DensityPair& densities,
                       const EmbeddingTable& embeddings, const std::vector<double>& z,
                       double lambda1, double lambda2) {
    validate_inputs(space, densities, embeddings, z);
    double attract = 0.0;
    double repel = 0.0;
    for (std::size_t t = 0; t < embeddings.size(); ++t) {
        const double d = distance(z, embeddings[t]);
        attract += densities.p_star[t] * d;
        repel += densities.p_hat[t] * d;
    }
    return lambda1 * attract - lambda2 * repel;
}

Decomposition rhs_decomposition(const DiscreteTrajectorySpace& space, const DensityPair& densities,
                                const EmbeddingTable& embeddings, const std::vector<double>& z,
                                double lambda1, double lambda2) {
    validate_inputs(space, densities, embeddings, z);
    Decomposition out;
    for (std::size_t t = 0; t < embeddings.size(); ++t) {
        const double weight = lambda1 * densities.p_star[t] - lambda2 * densities.p_hat[t];
        const double contribution = weight * distance(z, embeddings[t]);
        if (weight >= 0.0) {
            out.term1 += contribution;
        } else {
            out.term2 += contribution;
        }
    }
    return out;
}

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
    // Normalized exponentials: symmetric over the simplex, strictly positive.
    std::uniform_real_distribution<double> uniform(1e-12, 1.0);
    std::vector<double> out(n);
    double sum = 0.0;
    for (double& v : out) {
        v = -std::log(uniform(rng));
        sum += v;
    }
    for (double& v : out) v /= sum;
    return out;
}

TheoremReport check_theorem(int instances, std::uint64_t seed) {
    if (instances < 1) throw ContractError("check_theorem: instances must be >= 1");

    DiscreteTrajectorySpace space{2, 2, 2};
    const std::size_t n = static_cast<std::size_t>(space.num_trajectories());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> weight(0.1, 2.0);

    TheoremReport report;
    report.instances = instances;
    report.seed = seed;
    for (int i = 0; i < instances; ++i) {
        DensityPair densities{random_simplex(rng, n), random_simplex(rng, n)};
        EmbeddingTable embeddings(n, std::vector<double>(2));
        for (auto& e : embeddings) {
            e[0] = unit(rng);
            e[1] = unit(rng);
        }
        std::vector<double> z{unit(rng), unit(rng)};
        const double lambda1 = weight(rng);
        const double lambda2 = weight(rng);

        const double lhs = lhs_expectation(space, densities, embeddings, z, lambda1, lambda2);
        const Decomposition rhs = rhs_decomposition(space, densities, embeddings, z, lambda1, lambda2);
        report.max_abs_error = std::max(report.max_abs_error, std::abs(lhs - (rhs.term1 + rhs.term2)));
        if (rhs.term1 < 0.0 || rhs.term2 > 0.0) report.sign_structure_ok = false;
    }
    report.pass = report.sign_structure_ok && report.max_abs_error <= kEqualityTolerance;
    return report;
}

std::string theorem_report_json(const TheoremReport& report) {
    std::ostringstream os;
    os.precision(17);
    os << "{\"instances\":" << report.instances << ",\"max_abs_error\":" << report.max_abs_error
       << ",\"sign_structure_ok\":" << (report.sign_structure_ok ? "true" : "false")
       << ",\"seed\":" << report.seed << ",\"pass\":" << (report.pass ? "true" : "false") << "}";
    return os.str();
}

}  // namespace stitchformer
