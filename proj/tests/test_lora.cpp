#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "granseg/lora.hpp"
#include "support.hpp"

#include <Eigen/SVD>
#include <filesystem>

using namespace granseg;
using namespace testing;

namespace fs = std::filesystem;

TEST_CASE("low-rank layer oracle at d=6, r=2") {
    Mat w(6, 6);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) w(i, j) = 0.1 * (i - j) + (i == j ? 1.0 : 0.0);
    auto layer = LoraLayer::wrap(w, 2, 0.5, 3);
    CHECK(layer.rank() == 2);
    CHECK(layer.dim() == 6);
    CHECK(layer.b.isZero(0.0));
    layer.b = Mat::Constant(6, 2, 0.25);
    layer.b(1, 0) = -1.0;
    Eigen::VectorXd x(6);
    x << 1, -2, 0.5, 3, 0, -1;
    // W x + B (A x), expanded by hand
    Eigen::VectorXd expect(6);
    for (int i = 0; i < 6; ++i) {
        double v = 0.0;
        for (int j = 0; j < 6; ++j) v += w(i, j) * x(j);
        for (int k = 0; k < 2; ++k) {
            double ax = 0.0;
            for (int j = 0; j < 6; ++j) ax += layer.a(k, j) * x(j);
            v += layer.b(i, k) * ax;
        }
        expect(i) = v;
    }
    CHECK((lora_forward(layer, x) - expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((lora_forward(layer, 2.0 * x) - 2.0 * lora_forward(layer, x)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero-initialized update leaves the base projection unchanged") {
    std::mt19937_64 rng(1);
    const Mat w = Mat::Random(8, 8);
    const auto layer = LoraLayer::wrap(w, 3, 0.0, 5);
    for (int t = 0; t < 10; ++t) {
        const Eigen::VectorXd x = Eigen::VectorXd::Random(8);
        CHECK((lora_forward(layer, x) - w * x).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("update rank is bounded by r") {
    for (int r : {1, 2, 4, 7}) {
        auto layer = LoraLayer::wrap(Mat::Random(12, 12), r, 0.0, static_cast<std::uint64_t>(r));
        layer.b = Mat::Random(12, r);
        const Mat delta = layer.b * layer.a;
        Eigen::JacobiSVD<Mat> svd(delta);
        const auto& sv = svd.singularValues();
        for (Eigen::Index i = r; i < sv.size(); ++i) CHECK(sv(i) < 1e-10 * std::max(1.0, sv(0)));
    }
}

TEST_CASE("wrap preconditions") {
    CHECK_THROWS_AS(LoraLayer::wrap(Mat::Zero(4, 5), 2, 0.0, 0), ContractViolation);
    CHECK_THROWS_AS(LoraLayer::wrap(Mat::Zero(4, 4), 4, 0.0, 0), ContractViolation);
    CHECK_THROWS_AS(LoraLayer::wrap(Mat::Zero(4, 4), 0, 0.0, 0), ContractViolation);
}

TEST_CASE("adapter parameter count") {
    SegmenterConfig c;
    c.image_size = 64;
    const auto s = inject_lora(init_segmenter(c, 1), {8, 0.0, false, 2});
    CHECK(adapter_parameter_count(s) == 12288);
    const auto t = inject_lora(init_segmenter(tiny_config(), 1), {4, 0.0, false, 2});
    CHECK(adapter_parameter_count(t) == 2 * 2 * 2 * 4 * 16);
}

TEST_CASE("injection keeps the model output and freezes the base") {
    auto base = init_segmenter(tiny_config(), 3);
    jitter(base, 4);
    const auto adapted = inject_lora(base, {4, 0.0, false, 5});
    CHECK(adapted.adapted());
    CHECK(adapted.lora_rank == 4);
    std::mt19937_64 rng(6);
    const auto img = random_image(rng, 32, 32);
    const ClickSet clicks{{10, 10, Polarity::positive}};
    const ProbabilityMap prev(32, 32);
    CHECK(Segmenter(base).predict(img, clicks, prev, 0.4).values ==
          Segmenter(adapted).predict(img, clicks, prev, 0.4).values);
    for (const auto& name : adapted.trainable)
        CHECK((name.find(".lora_") != std::string::npos || name == "gran_embed"));
    CHECK(adapted.is_trainable("gran_embed"));
    CHECK_FALSE(adapted.is_trainable("blocks.0.attn.q.w"));
    const auto with_prompt = inject_lora(base, {4, 0.0, true, 5});
    CHECK(with_prompt.is_trainable("prompt_patch.w"));
    CHECK_THROWS_AS(inject_lora(adapted, {4, 0.0, false, 5}), ContractViolation);
}

TEST_CASE("adapter checkpoint round trip") {
    const auto dir = fs::temp_directory_path() / "granseg_test_lora";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto base = init_segmenter(tiny_config(), 7);
    jitter(base, 8);
    auto adapted = inject_lora(base, {4, 0.0, false, 9});
    adapted.params.for_each([&](const std::string& name, Mat& m) {
        if (adapted.is_trainable(name)) m.setRandom();
    });
    save_adapter(adapted, dir / "a.bin");
    const auto back = load_adapter(base, dir / "a.bin");
    CHECK(back.lora_rank == 4);
    CHECK(back.trainable == adapted.trainable);
    std::mt19937_64 rng(10);
    const auto img = random_image(rng, 32, 32);
    const ClickSet clicks{{3, 30, Polarity::positive}, {16, 16, Polarity::negative}};
    const ProbabilityMap prev(32, 32, 0.5);
    CHECK(Segmenter(back).predict(img, clicks, prev, 0.8).values ==
          Segmenter(adapted).predict(img, clicks, prev, 0.8).values);

    auto other = tiny_config();
    other.depth = 3;
    CHECK_THROWS_AS(load_adapter(init_segmenter(other, 1), dir / "a.bin"), ConfigMismatch);
    CHECK_THROWS_AS(load_adapter(base, dir / "missing.bin"), IoError);
    save_params(base, dir / "full.ckpt");
    CHECK_THROWS_AS(load_adapter(base, dir / "full.ckpt"), IoError);
    CHECK_THROWS_AS(load_params(dir / "a.bin"), IoError);
    CHECK_THROWS_AS(save_adapter(base, dir / "b.bin"), ContractViolation);
    fs::remove_all(dir);
}
