#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "stitchformer/checkpoint.hpp"
#include "stitchformer/errors.hpp"
#include "stitchformer/ops.hpp"
#include "stitchformer/optimizer.hpp"
#include "support/grad_check.hpp"

using namespace stitchformer;
using testsupport::random_tensor;

namespace {

std::filesystem::path temp_file(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "stitchformer_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("warmup schedule boundaries") {
    Tensor w = Tensor::from_data({2}, {1.0, -2.0}, true);
    AdamConfig cfg;  // base_lr 1.2e-4, warmup 10000
    AdamW opt({w}, cfg);
    CHECK(opt.effective_lr() == 0.0);

    // Step at t=0: effective lr 0, so only the decoupled decay moves weights.
    w.mutable_grad() = {1.0, 1.0};
    opt.step();
    const double decay = cfg.base_lr * cfg.weight_decay;
    CHECK(w.values()[0] == doctest::Approx(1.0 * (1.0 - decay)).epsilon(1e-12));
    CHECK(w.values()[1] == doctest::Approx(-2.0 * (1.0 - decay)).epsilon(1e-12));

    AdamW opt2({w}, cfg);
    for (int i = 0; i < 10000; ++i) {
        w.mutable_grad() = {0.0, 0.0};
        opt2.step();
    }
    CHECK(opt2.effective_lr() == doctest::Approx(1.2e-4));
    AdamW opt3({w}, cfg);
    for (int i = 0; i < 20000; ++i) {
        w.mutable_grad() = {0.0, 0.0};
        opt3.step();
    }
    CHECK(opt3.effective_lr() == doctest::Approx(1.2e-4));  // constant after warmup
}

TEST_CASE("missing gradient is a contract violation") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    AdamW opt({w}, AdamConfig{});
    CHECK_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("step leaves grads intact for the caller to zero") {
    Tensor w = Tensor::from_data({2}, {1.0, 2.0}, true);
    AdamW opt({w}, AdamConfig{});
    w.mutable_grad() = {0.5, -0.5};
    opt.step();
    CHECK(w.grad() == std::vector<double>{0.5, -0.5});
    opt.zero_grad();
    CHECK(w.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("two identical runs are bitwise identical after 100 steps") {
    auto run = [] {
        std::mt19937_64 rng(77);
        Tensor w = random_tensor(rng, {4, 4}, -1, 1);
        Tensor x = random_tensor(rng, {2, 4}, -1, 1, false);
        AdamConfig cfg;
        cfg.base_lr = 1e-3;
        cfg.warmup_steps = 10;
        AdamW opt({w}, cfg);
        for (int i = 0; i < 100; ++i) {
            opt.zero_grad();
            Tensor loss = vector_norm(matmul(x, w), NormKind::kL2);
            backward(loss);
            opt.step();
        }
        return w.values();
    };
    CHECK(run() == run());
}

TEST_CASE("optimization actually descends") {
    std::mt19937_64 rng(5);
    Tensor w = random_tensor(rng, {1, 8}, -1, 1);
    Tensor target = random_tensor(rng, {1, 8}, -0.5, 0.5, false);
    AdamConfig cfg;
    cfg.base_lr = 5e-2;
    cfg.warmup_steps = 0;
    cfg.weight_decay = 0;
    AdamW opt({w}, cfg);
    const double initial = vector_norm(sub(w, target), NormKind::kL2).item();
    for (int i = 0; i < 300; ++i) {
        opt.zero_grad();
        backward(vector_norm(sub(w, target), NormKind::kL2));
        opt.step();
    }
    const double final_loss = vector_norm(sub(w, target), NormKind::kL2).item();
    CHECK(final_loss < 0.05 * initial);
}

TEST_CASE("checkpoint round trip is bit exact") {
    std::mt19937_64 rng(31);
    std::vector<NamedParam> params{{"layer0/w", random_tensor(rng, {4, 3}, -1, 1)},
                                   {"layer0/b", random_tensor(rng, {3}, -1, 1)},
                                   {"latent/z", random_tensor(rng, {1, 16}, -1, 1)}};
    auto path = temp_file("roundtrip.ckpt");
    save_checkpoint(path.string(), params, {{"arch", "test"}, {"hidden", "4"}});

    std::vector<NamedParam> loaded{{"layer0/w", Tensor::zeros({4, 3})},
                                   {"layer0/b", Tensor::zeros({3})},
                                   {"latent/z", Tensor::zeros({1, 16})}};
    auto result = load_checkpoint(path.string(), loaded);
    CHECK(result.meta.at("arch") == "test");
    CHECK(result.precision_note.empty());
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(loaded[i].tensor.values() == params[i].tensor.values());
    }
}

TEST_CASE("checkpoint rejects corruption") {
    std::mt19937_64 rng(32);
    std::vector<NamedParam> params{{"w", random_tensor(rng, {8, 8}, -1, 1)}};
    auto path = temp_file("corrupt.ckpt");
    save_checkpoint(path.string(), params, {});

    // Truncate the file.
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
    }
    std::vector<NamedParam> loaded{{"w", Tensor::zeros({8, 8})}};
    CHECK_THROWS_AS(load_checkpoint(path.string(), loaded), CorruptionError);

    // Flip one payload byte.
    save_checkpoint(path.string(), params, {});
    {
        std::fstream io(path, std::ios::binary | std::ios::in | std::ios::out);
        io.seekp(-4, std::ios::end);
        char b;
        io.seekg(-4, std::ios::end);
        io.read(&b, 1);
        b = static_cast<char>(b ^ 0x40);
        io.seekp(-4, std::ios::end);
        io.write(&b, 1);
    }
    CHECK_THROWS_AS(load_checkpoint(path.string(), loaded), CorruptionError);
}

TEST_CASE("checkpoint rejects bad magic and wrong shapes") {
    auto path = temp_file("badmagic.ckpt");
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOTACKPTxxxxxxxxxxxxxxxx";
    }
    std::vector<NamedParam> loaded{{"w", Tensor::zeros({2, 2})}};
    CHECK_THROWS_AS(load_checkpoint(path.string(), loaded), FormatError);

    std::mt19937_64 rng(33);
    std::vector<NamedParam> params{{"w", random_tensor(rng, {2, 2}, -1, 1)}};
    save_checkpoint(path.string(), params, {});
    std::vector<NamedParam> wrong{{"w", Tensor::zeros({2, 3})}};
    CHECK_THROWS_AS(load_checkpoint(path.string(), wrong), ContractError);
    std::vector<NamedParam> missing{{"v", Tensor::zeros({2, 2})}};
    CHECK_THROWS_AS(load_checkpoint(path.string(), missing), ContractError);
}

TEST_CASE("cross precision load carries a conversion note") {
    std::mt19937_64 rng(34);
    std::vector<NamedParam> params{{"w", random_tensor(rng, {3, 3}, -1, 1)}};
    auto path = temp_file("xprec.ckpt");
    save_checkpoint(path.string(), params, {});  // written as f64

    set_global_precision(Precision::kF32);
    std::vector<NamedParam> loaded{{"w", Tensor::zeros({3, 3})}};
    auto result = load_checkpoint(path.string(), loaded);
    CHECK(result.stored_precision == Precision::kF64);
    CHECK_FALSE(result.precision_note.empty());
    for (std::size_t i = 0; i < loaded[0].tensor.values().size(); ++i) {
        CHECK(loaded[0].tensor.values()[i] ==
              static_cast<double>(static_cast<float>(params[0].tensor.values()[i])));
    }
    set_global_precision(Precision::kF64);
}
