#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "simcis/csl.hpp"

using namespace simcis;

namespace {

PrototypeSet protos_d1() {
    // two prototypes in D=1: a=1, b=0
    ParamStore ps;
    Rng rng(1);
    PrototypeSet base;
    base.dim = 1;
    PrototypeSet p = concat_prototypes(base, {0, 1}, 0, 0.0, rng, ps);
    p.stage_vecs[0].value().at(0, 0) = 1.0;
    p.stage_vecs[0].value().at(1, 0) = 0.0;
    return p;
}

}  // namespace

TEST_CASE("csl loss is zero when student equals teacher") {
    Rng rng(2);
    ParamStore ps;
    PrototypeSet base;
    base.dim = 6;
    PrototypeSet protos = concat_prototypes(base, {0, 1, 2}, 0, 0.4, rng, ps);
    Tensor feats = rng.randn({5, 6});
    Var teacher = Var::constant(feats);
    Var student = Var::constant(feats);
    CHECK(std::abs(csl_loss(teacher, student, protos).scalar()) <= 1e-9);
}

TEST_CASE("csl hand case: teacher logits (0,0), student (ln2, 0)") {
    PrototypeSet protos = protos_d1();
    Var teacher = Var::constant(Tensor({1, 1}, {0.0}));
    Var student = Var::constant(Tensor({1, 1}, {std::log(2.0)}));
    const double expect = 0.5 * std::log(0.5 / (2.0 / 3.0)) + 0.5 * std::log(0.5 / (1.0 / 3.0));
    CHECK(expect == doctest::Approx(0.0589).epsilon(1e-2));
    // The loss carries a 1e-8 stabilizer inside the logarithms, so exact
    // agreement stops a hair short of machine precision.
    CHECK(csl_loss(teacher, student, protos).scalar() == doctest::Approx(expect).epsilon(1e-5));
    CHECK(csl_loss(teacher, student, protos).scalar() == doctest::Approx(0.0589).epsilon(2e-3));
}

TEST_CASE("csl loss is non-negative on random inputs") {
    Rng rng(3);
    ParamStore ps;
    PrototypeSet base;
    base.dim = 4;
    PrototypeSet protos = concat_prototypes(base, {0, 1, 2, 3, 4}, 0, 0.8, rng, ps);
    for (int trial = 0; trial < 2000; ++trial) {
        Var teacher = Var::constant(rng.randn({3, 4}, 2.0));
        Var student = Var::constant(rng.randn({3, 4}, 2.0));
        CHECK(csl_loss(teacher, student, protos).scalar() >= -1e-12);
    }
}

TEST_CASE("csl gradient reaches the student branch only") {
    Rng rng(4);
    ParamStore ps;
    PrototypeSet base;
    base.dim = 5;
    PrototypeSet protos = concat_prototypes(base, {0, 1, 2}, 0, 0.5, rng, ps);
    freeze_all(ps);  // previous-stage prototypes are frozen

    Var teacher = Var::param(rng.randn({4, 5}));
    Var student = Var::param(rng.randn({4, 5}));
    teacher.zero_grad();
    student.zero_grad();
    for (auto [name, p] : ps.items()) p.zero_grad();

    backward(csl_loss(teacher, student, protos));

    double tg = 0, sg = 0, pg = 0;
    for (int64_t i = 0; i < teacher.numel(); ++i) tg += std::abs(teacher.grad()[i]);
    for (int64_t i = 0; i < student.numel(); ++i) sg += std::abs(student.grad()[i]);
    for (auto [name, p] : ps.items())
        for (int64_t i = 0; i < p.numel(); ++i) pg += std::abs(p.grad()[i]);
    CHECK(tg == 0.0);  // teacher enters as constants
    CHECK(sg > 0.0);
    CHECK(pg == 0.0);  // frozen prototypes receive nothing
}

TEST_CASE("csl gradient matches finite differences on the student") {
    Rng rng(5);
    ParamStore ps;
    PrototypeSet base;
    base.dim = 4;
    PrototypeSet protos = concat_prototypes(base, {0, 1, 2}, 0, 0.6, rng, ps);
    Var teacher = Var::constant(rng.randn({3, 4}));
    Var student = Var::param(rng.randn({3, 4}));
    check_grad({student}, [&] { return csl_loss(teacher, student, protos); }, 1e-5, 1e-5);
}

TEST_CASE("previous-stage selection equals current selection for an identical model") {
    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.dim = 8;
    cfg.encoder_channels = 8;
    cfg.decoder_layers = 2;
    cfg.num_queries = 4;
    cfg.attn_heads = 2;
    cfg.ffn_hidden = 16;
    Model model(cfg, 4, 77);
    Rng rng(6);
    Tensor img = rng.rand_uniform({3, 16, 16}, 0.0, 1.0);
    ParamStore ps;
    PrototypeSet base;
    base.dim = 8;
    PrototypeSet protos = concat_prototypes(base, {0, 1, 2, 3}, 0, 0.5, rng, ps);

    MultiScaleFeatures f = model.encode(img);
    SelectionIndex current = select_topk(score_features(f, protos), f, 6);
    SelectionIndex prev = previous_stage_selection(f, protos, 6);
    CHECK(current.flat == prev.flat);

    SelectionIndex again = previous_stage_selection(model.encode(img), protos, 6);
    CHECK(prev.flat == again.flat);
}

TEST_CASE("freeze_all clears the trainable flag everywhere") {
    ParamStore ps;
    Rng rng(7);
    ps.add("a", rng.randn({2, 2}));
    ps.add("b", rng.randn({3}));
    freeze_all(ps);
    for (auto [name, p] : ps.items()) CHECK(!p.requires_grad());
}
