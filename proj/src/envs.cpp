#include "stitchformer/envs.hpp"

#include <array>
#include <cmath>
#include <queue>

#include "stitchformer/errors.hpp"
#include "stitchformer/rng.hpp"

namespace stitchformer {

namespace {

int argmax(const std::vector<double>& values) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(values.size()); ++i) {
        if (values[static_cast<std::size_t>(i)] > values[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

std::vector<double> onehot(int index, int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
    v[static_cast<std::size_t>(index)] = 1.0;
    return v;
}

// --------------------------------------------------------------------------
// ChainStitch: 10 cells in a row, reach the far end.

class ChainStitchEnv final : public Env {
  public:
    static constexpr int kCells = 10;
    static constexpr int kGoal = 9;

    ChainStitchEnv() {
        spec_.name = "chain-stitch";
        spec_.obs_dim = 1;
        spec_.action_dim = 2;  // 0: left, 1: right
        spec_.action_kind = ActionKind::kDiscreteOnehot;
        spec_.horizon = 25;
        spec_.goal_desc = "reach cell 9";
        spec_.reward_desc = "1 on entering the goal cell, else 0";
    }

    const EnvSpec& spec() const override { return spec_; }

    std::vector<double> reset(std::uint64_t seed) override {
        // Start in the left cells {0,1,2}.
        cell_ = static_cast<int>(mix64(seed) % 3);
        t_ = 0;
        done_ = false;
        return obs();
    }

    std::vector<double> reset_to(const std::vector<double>& o) override {
        const int cell = static_cast<int>(std::lround(o.at(0)));
        if (cell < 0 || cell >= kCells) throw ContractError("chain-stitch: cell out of range");
        if (cell == kGoal) throw ContractError("chain-stitch: cannot start at the goal");
        cell_ = cell;
        t_ = 0;
        done_ = false;
        return obs();
    }

    StepResult step(const std::vector<double>& action) override {
        if (done_) throw ContractError("chain-stitch: step after done");
        if (static_cast<int>(action.size()) != spec_.action_dim) {
            throw ContractError("chain-stitch: action dim mismatch");
        }
        const int dir = argmax(action) == 1 ? 1 : -1;
        cell_ = std::min(kCells - 1, std::max(0, cell_ + dir));
        ++t_;
        StepResult result;
        result.reached_goal = cell_ == kGoal;
        result.reward = result.reached_goal ? 1.0 : 0.0;
        done_ = result.reached_goal || t_ >= spec_.horizon;
        result.done = done_;
        result.obs = obs();
        return result;
    }

    bool done() const override { return done_; }
    int t() const override { return t_; }

  private:
    std::vector<double> obs() const { return {static_cast<double>(cell_)}; }

    EnvSpec spec_;
    int cell_ = 0;
    int t_ = 0;
    bool done_ = false;
};

// --------------------------------------------------------------------------
// FourRooms: 11x11 grid, four rooms joined by doorways, corner to corner.

constexpr int kRoomsSize = 11;

bool rooms_wall(int row, int col) {
    if (row < 0 || row >= kRoomsSize || col < 0 || col >= kRoomsSize) return true;
    const bool on_h_wall = row == 5 && col != 2 && col != 8;
    const bool on_v_wall = col == 5 && row != 2 && row != 8;
    return on_h_wall || on_v_wall;
}

// Actions ordered so the scripted expert's tie-break prefers the left route.
constexpr std::array<std::array<int, 2>, 4> kRoomsMoves{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};

std::vector<int> rooms_bfs_from(int goal_row, int goal_col) {
    std::vector<int> dist(kRoomsSize * kRoomsSize, -1);
    std::queue<std::pair<int, int>> queue;
    dist[static_cast<std::size_t>(goal_row * kRoomsSize + goal_col)] = 0;
    queue.push({goal_row, goal_col});
    while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop();
        for (const auto& mv : kRoomsMoves) {
            const int nr = r + mv[0];
            const int nc = c + mv[1];
            if (rooms_wall(nr, nc)) continue;
            int& d = dist[static_cast<std::size_t>(nr * kRoomsSize + nc)];
            if (d < 0) {
                d = dist[static_cast<std::size_t>(r * kRoomsSize + c)] + 1;
                queue.push({nr, nc});
            }
        }
    }
    return dist;
}

class FourRoomsEnv final : public Env {
  public:
    static constexpr int kGoalRow = 10;
    static constexpr int kGoalCol = 10;

    FourRoomsEnv() {
        spec_.name = "four-rooms";
        spec_.obs_dim = 2;
        spec_.action_dim = 4;  // 0: down, 1: right, 2: up, 3: left
        spec_.action_kind = ActionKind::kDiscreteOnehot;
        spec_.horizon = 100;
        spec_.goal_desc = "reach cell (10,10)";
        spec_.reward_desc = "1 on entering the goal cell, else 0";
    }

    const EnvSpec& spec() const override { return spec_; }

    std::vector<double> reset(std::uint64_t seed) override {
        // Start in the 3x3 corner block of the first room.
        const std::uint64_t h = mix64(seed);
        row_ = static_cast<int>(h % 3);
        col_ = static_cast<int>((h >> 8) % 3);
        t_ = 0;
        done_ = false;
        return obs();
    }

    std::vector<double> reset_to(const std::vector<double>& o) override {
        const int row = static_cast<int>(std::lround(o.at(0)));
        const int col = static_cast<int>(std::lround(o.at(1)));
        if (rooms_wall(row, col)) throw ContractError("four-rooms: cell is a wall or outside");
        if (row == kGoalRow && col == kGoalCol) {
            throw ContractError("four-rooms: cannot start at the goal");
        }
        row_ = row;
        col_ = col;
        t_ = 0;
        done_ = false;
        return obs();
    }

    StepResult step(const std::vector<double>& action) override {
        if (done_) throw ContractError("four-rooms: step after done");
        if (static_cast<int>(action.size()) != spec_.action_dim) {
            throw ContractError("four-rooms: action dim mismatch");
        }
        const auto& mv = kRoomsMoves[static_cast<std::size_t>(argmax(action))];
        const int nr = row_ + mv[0];
        const int nc = col_ + mv[1];
        if (!rooms_wall(nr, nc)) {
            row_ = nr;
            col_ = nc;
        }
        ++t_;
        StepResult result;
        result.reached_goal = row_ == kGoalRow && col_ == kGoalCol;
        result.reward = result.reached_goal ? 1.0 : 0.0;
        done_ = result.reached_goal || t_ >= spec_.horizon;
        result.done = done_;
        result.obs = obs();
        return result;
    }

    bool done() const override { return done_; }
    int t() const override { return t_; }

  private:
    std::vector<double> obs() const {
        return {static_cast<double>(row_), static_cast<double>(col_)};
    }

    EnvSpec spec_;
    int row_ = 0;
    int col_ = 0;
    int t_ = 0;
    bool done_ = false;
};

// --------------------------------------------------------------------------
// PointMass: unit square with an inner wall; velocity-controlled point must
// round the wall to reach the goal disc.

struct WallSegment {
    double x0, y0, x1, y1;
};

const std::array<WallSegment, 5> kPointWalls{{
    {0.0, 0.0, 1.0, 0.0},  // boundary
    {1.0, 0.0, 1.0, 1.0},
    {1.0, 1.0, 0.0, 1.0},
    {0.0, 1.0, 0.0, 0.0},
    {0.5, 0.0, 0.5, 0.7},  // inner wall
}};

double cross(double ax, double ay, double bx, double by) { return ax * by - ay * bx; }

// Segment intersection with a small tolerance; touching counts as blocked.
bool segments_intersect(double px, double py, double qx, double qy, const WallSegment& w) {
    const double rx = qx - px, ry = qy - py;
    const double sx = w.x1 - w.x0, sy = w.y1 - w.y0;
    const double denom = cross(rx, ry, sx, sy);
    const double qpx = w.x0 - px, qpy = w.y0 - py;
    constexpr double kEps = 1e-12;
    if (std::abs(denom) < kEps) {
        if (std::abs(cross(qpx, qpy, rx, ry)) > kEps) return false;  // parallel, apart
        // Collinear: overlap check via projection.
        const double rr = rx * rx + ry * ry;
        if (rr < kEps) return false;
        const double t0 = (qpx * rx + qpy * ry) / rr;
        const double t1 = t0 + (sx * rx + sy * ry) / rr;
        return std::max(std::min(t0, t1), 0.0) <= std::min(std::max(t0, t1), 1.0);
    }
    const double t = cross(qpx, qpy, sx, sy) / denom;
    const double u = cross(qpx, qpy, rx, ry) / denom;
    return t >= -kEps && t <= 1.0 + kEps && u >= -kEps && u <= 1.0 + kEps;
}

class PointMassEnv final : public Env {
  public:
    static constexpr double kGoalX = 0.9;
    static constexpr double kGoalY = 0.1;
    static constexpr double kGoalRadius = 0.07;
    static constexpr double kMaxSpeed = 0.1;

    PointMassEnv() {
        spec_.name = "point-mass";
        spec_.obs_dim = 2;
        spec_.action_dim = 2;
        spec_.action_kind = ActionKind::kContinuousBox;
        spec_.horizon = 60;
        spec_.goal_desc = "reach the disc of radius 0.07 around (0.9,0.1)";
        spec_.reward_desc = "1 on entering the goal disc, else 0";
        spec_.action_low = {-kMaxSpeed, -kMaxSpeed};
        spec_.action_high = {kMaxSpeed, kMaxSpeed};
    }

    const EnvSpec& spec() const override { return spec_; }

    std::vector<double> reset(std::uint64_t seed) override {
        RngStream stream(seed, 0);
        x_ = 0.1 + (stream.uniform() - 0.5) * 0.08;
        y_ = 0.1 + (stream.uniform() - 0.5) * 0.08;
        t_ = 0;
        done_ = false;
        return obs();
    }

    std::vector<double> reset_to(const std::vector<double>& o) override {
        const double x = o.at(0);
        const double y = o.at(1);
        if (x <= 0.0 || x >= 1.0 || y <= 0.0 || y >= 1.0) {
            throw ContractError("point-mass: start outside the box");
        }
        if (std::hypot(x - kGoalX, y - kGoalY) <= kGoalRadius) {
            throw ContractError("point-mass: cannot start inside the goal disc");
        }
        x_ = x;
        y_ = y;
        t_ = 0;
        done_ = false;
        return obs();
    }

    StepResult step(const std::vector<double>& action) override {
        if (done_) throw ContractError("point-mass: step after done");
        if (static_cast<int>(action.size()) != spec_.action_dim) {
            throw ContractError("point-mass: action dim mismatch");
        }
        const double vx = std::min(kMaxSpeed, std::max(-kMaxSpeed, action[0]));
        const double vy = std::min(kMaxSpeed, std::max(-kMaxSpeed, action[1]));
        const double nx = x_ + vx;
        const double ny = y_ + vy;
        bool blocked = false;
        for (const WallSegment& wall : kPointWalls) {
            if (segments_intersect(x_, y_, nx, ny, wall)) {
                blocked = true;
                break;
            }
        }
        if (!blocked) {
            x_ = nx;
            y_ = ny;
        }
        ++t_;
        StepResult result;
        result.reached_goal = std::hypot(x_ - kGoalX, y_ - kGoalY) <= kGoalRadius;
        result.reward = result.reached_goal ? 1.0 : 0.0;
        done_ = result.reached_goal || t_ >= spec_.horizon;
        result.done = done_;
        result.obs = obs();
        return result;
    }

    bool done() const override { return done_; }
    int t() const override { return t_; }

  private:
    std::vector<double> obs() const { return {x_, y_}; }

    EnvSpec spec_;
    double x_ = 0.1, y_ = 0.1;
    int t_ = 0;
    bool done_ = false;
};

}  // namespace

namespace fourrooms {
bool is_wall(int row, int col) { return rooms_wall(row, col); }
}  // namespace fourrooms

std::vector<std::string> env_names() { return {"chain-stitch", "four-rooms", "point-mass"}; }

std::unique_ptr<Env> make_env(const std::string& name) {
    if (name == "chain-stitch") return std::make_unique<ChainStitchEnv>();
    if (name == "four-rooms") return std::make_unique<FourRoomsEnv>();
    if (name == "point-mass") return std::make_unique<PointMassEnv>();
    throw ContractError("unknown environment '" + name + "'");
}

ActionSpace action_space(const EnvSpec& spec) {
    ActionSpace space;
    space.kind = spec.action_kind;
    space.low = spec.action_low;
    space.high = spec.action_high;
    return space;
}

PolicyFn make_expert_policy(const Env& env) {
    const std::string name = env.spec().name;
    if (name == "chain-stitch") {
        return [](const std::vector<double>&) { return onehot(1, 2); };
    }
    if (name == "four-rooms") {
        auto dist = std::make_shared<std::vector<int>>(rooms_bfs_from(10, 10));
        return [dist](const std::vector<double>& obs) {
            const int row = static_cast<int>(std::lround(obs[0]));
            const int col = static_cast<int>(std::lround(obs[1]));
            int best_action = 0;
            int best_dist = kRoomsSize * kRoomsSize;
            for (std::size_t a = 0; a < kRoomsMoves.size(); ++a) {
                const int nr = row + kRoomsMoves[a][0];
                const int nc = col + kRoomsMoves[a][1];
                if (rooms_wall(nr, nc)) continue;
                const int d = (*dist)[static_cast<std::size_t>(nr * kRoomsSize + nc)];
                if (d >= 0 && d < best_dist) {
                    best_dist = d;
                    best_action = static_cast<int>(a);
                }
            }
            return onehot(best_action, 4);
        };
    }
    if (name == "point-mass") {
        return [](const std::vector<double>& obs) {
            const double x = obs[0];
            const double y = obs[1];
            double tx, ty;
            if (x <= 0.55 && y < 0.75) {
                tx = 0.35;
                ty = 0.8;
            } else if (y >= 0.75 && x < 0.6) {
                tx = 0.65;
                ty = 0.8;
            } else {
                tx = PointMassEnv::kGoalX;
                ty = PointMassEnv::kGoalY;
            }
            const double dx = tx - x;
            const double dy = ty - y;
            return std::vector<double>{std::min(0.1, std::max(-0.1, dx)),
                                       std::min(0.1, std::max(-0.1, dy))};
        };
    }
    throw ContractError("no expert policy for environment '" + name + "'");
}

PolicyFn make_random_policy(const Env& env, std::uint64_t seed) {
    const EnvSpec& spec = env.spec();
    auto stream = std::make_shared<RngStream>(seed, 1);
    if (spec.action_kind == ActionKind::kDiscreteOnehot) {
        const int dim = spec.action_dim;
        return [stream, dim](const std::vector<double>&) {
            return onehot(static_cast<int>(stream->next_u64() % static_cast<std::uint64_t>(dim)), dim);
        };
    }
    std::vector<double> low = spec.action_low;
    std::vector<double> high = spec.action_high;
    return [stream, low, high](const std::vector<double>&) {
        std::vector<double> action(low.size());
        for (std::size_t i = 0; i < action.size(); ++i) {
            action[i] = low[i] + stream->uniform() * (high[i] - low[i]);
        }
        return action;
    };
}

}  // namespace stitchformer
