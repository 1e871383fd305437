#include <doctest.h>

#include <cmath>

#include "clora/sampler.hpp"
#include "clora/synthetic.hpp"

using namespace clora;

namespace {

struct Fixture {
    ModelConfig mc{8, 8, 6, 8};
    DenoiserModel model;
    NoiseSchedule sched;
    LoraSet content_set, style_set;

    Fixture() : model(DenoiserModel::init(mc, 77)), sched(make_linear_schedule(50, 1e-4, 0.02)) {
        Rng rng(7);
        content_set.content = make_lora_adapter(model, BlockId::content_block, 2, 2.0, rng);
        content_set.style   = make_lora_adapter(model, BlockId::style_block, 2, 2.0, rng);
        style_set.content   = make_lora_adapter(model, BlockId::content_block, 2, 2.0, rng);
        style_set.style     = make_lora_adapter(model, BlockId::style_block, 2, 2.0, rng);
        // give every factor nonzero weights so the six forwards all differ
        for (LoraSet* s : {&content_set, &style_set})
            for (auto* ad : {&*s->content, &*s->style})
                for (auto& e : ad->entries)
                    for (auto& v : e.b.values()) v = 0.05 * rng.normal();
        content_set.content_token = rand_uniform({mc.embed_dim}, rng, -0.5, 0.5);
        content_set.style_token   = rand_uniform({mc.embed_dim}, rng, -0.5, 0.5);
        style_set.content_token   = rand_uniform({mc.embed_dim}, rng, -0.5, 0.5);
        style_set.style_token     = rand_uniform({mc.embed_dim}, rng, -0.5, 0.5);
    }

    GuidanceParams bound() { return bind_transfer(model, content_set, style_set); }
};

}  // namespace

TEST_CASE("all lambdas zero is the plain conditional prediction") {
    Fixture f;
    GuidanceParams gp = f.bound();
    gp.lambda_cfg = gp.lambda_cont = gp.lambda_sty = 0.0;
    Rng rng(1);
    Tensor zt = randn({8, 8, 3}, rng);

    AttachedLoras combined;
    combined.add(&*f.content_set.content);
    combined.add(&*f.style_set.style);
    Tensor expect = f.model.forward(zt, 25, "combined", &combined);
    CHECK(guided_epsilon(f.model, zt, 25, gp).values() == expect.values());
}

TEST_CASE("lambda_cont = lambda_sty = 0 reduces to textbook CFG bitwise") {
    Fixture f;
    GuidanceParams gp = f.bound();
    gp.lambda_cfg     = 3.5;
    gp.lambda_cont = gp.lambda_sty = 0.0;
    Rng rng(2);
    for (int i = 0; i < 20; ++i) {
        Tensor zt = randn({8, 8, 3}, rng);
        int t     = rng.uniform_int(1, f.sched.T);

        // independent classifier-free guidance implementation
        AttachedLoras combined;
        combined.add(&*f.content_set.content);
        combined.add(&*f.style_set.style);
        Tensor e_c = f.model.forward(zt, t, "combined", &combined);
        Tensor e_n = f.model.forward(zt, t, kNullCondition, &combined);
        std::vector<double> cfg_ref(e_c.values().size());
        for (size_t j = 0; j < cfg_ref.size(); ++j) {
            double diff = e_c.values()[j] - e_n.values()[j];
            cfg_ref[j]  = e_c.values()[j] + gp.lambda_cfg * diff;
        }
        CHECK(guided_epsilon(f.model, zt, t, gp).values() == cfg_ref);
    }
}

TEST_CASE("identical adapters and conditions cancel the difference terms") {
    Fixture f;
    // force both sets to share the content adapter / token, and both style
    // slots to share too: e_cc == e_sc and e_ss == e_cs
    f.style_set.content       = *f.content_set.content;
    f.content_set.style       = *f.style_set.style;
    f.style_set.content_token = f.content_set.content_token.clone();
    f.content_set.style_token = f.style_set.style_token.clone();

    GuidanceParams gp = f.bound();
    gp.lambda_cfg     = 2.0;
    gp.lambda_cont    = 3.0;
    gp.lambda_sty     = 4.0;

    GuidanceParams cfg_only = gp;
    cfg_only.lambda_cont = cfg_only.lambda_sty = 0.0;

    Rng rng(3);
    Tensor zt = randn({8, 8, 3}, rng);
    CHECK(guided_epsilon(f.model, zt, 10, gp).values() ==
          guided_epsilon(f.model, zt, 10, cfg_only).values());
}

TEST_CASE("forward count is minimal for the active lambdas") {
    Fixture f;
    Rng rng(4);
    Tensor zt = randn({8, 8, 3}, rng);
    auto count = [&](double lc, double lco, double ls) {
        GuidanceParams gp = f.bound();
        gp.lambda_cfg     = lc;
        gp.lambda_cont    = lco;
        gp.lambda_sty     = ls;
        f.model.forward_calls = 0;
        guided_epsilon(f.model, zt, 20, gp);
        return f.model.forward_calls;
    };
    CHECK(count(0, 0, 0) == 1);
    CHECK(count(5, 0, 0) == 2);
    CHECK(count(0, 1, 0) == 3);
    CHECK(count(0, 0, 1) == 3);
    CHECK(count(5, 1, 0) == 4);
    CHECK(count(5, 1, 1) == 6);
}

TEST_CASE("guided epsilon is affine in each lambda") {
    Fixture f;
    Rng rng(5);
    Tensor zt = randn({8, 8, 3}, rng);
    auto eval = [&](double lc, double lco, double ls) {
        GuidanceParams gp = f.bound();
        gp.lambda_cfg     = lc;
        gp.lambda_cont    = lco;
        gp.lambda_sty     = ls;
        return guided_epsilon(f.model, zt, 15, gp).values();
    };
    // three-point collinearity in each lambda with the others fixed
    auto collinear = [&](std::vector<double> e0, std::vector<double> e1, std::vector<double> e2) {
        for (size_t i = 0; i < e0.size(); ++i)
            CHECK(e2[i] - e1[i] == doctest::Approx(e1[i] - e0[i]).epsilon(1e-10));
    };
    collinear(eval(0, 1, 1), eval(1, 1, 1), eval(2, 1, 1));
    collinear(eval(1, 0, 1), eval(1, 1, 1), eval(1, 2, 1));
    collinear(eval(1, 1, 0), eval(1, 1, 1), eval(1, 1, 2));
}

TEST_CASE("guidance validation rejects broken references") {
    Fixture f;
    GuidanceParams gp = f.bound();
    gp.lambda_cfg     = -1.0;
    Rng rng(6);
    Tensor zt = randn({8, 8, 3}, rng);
    CHECK_THROWS_AS(guided_epsilon(f.model, zt, 5, gp), std::invalid_argument);

    gp            = f.bound();
    gp.cond_cc    = "nonexistent";
    gp.lambda_cont = 1.0;
    CHECK_THROWS_WITH_AS(guided_epsilon(f.model, zt, 5, gp), doctest::Contains("nonexistent"),
                         std::invalid_argument);

    gp = f.bound();
    gp.lambda_sty = 1.0;
    LoraSet no_style = f.content_set;
    no_style.style.reset();
    gp.content_set = &no_style;
    CHECK_THROWS_AS(guided_epsilon(f.model, zt, 5, gp), std::invalid_argument);
}

TEST_CASE("ddim_step endpoints and consistency") {
    auto s = make_linear_schedule(50, 1e-4, 0.02);
    Rng rng(8);
    Tensor z0  = randn({4, 4, 3}, rng);
    Tensor eps = randn({4, 4, 3}, rng);
    const int t = 30;
    Tensor zt  = forward_noise(s, z0, eps, t);

    // t_prev = 0 returns zhat_0 exactly (abar_0 = 1)
    Tensor terminal = ddim_step(s, zt, eps, t, 0);
    for (size_t i = 0; i < z0.values().size(); ++i)
        CHECK(terminal.values()[i] == doctest::Approx(z0.values()[i]).epsilon(1e-12));

    // with the true eps, one step lands on forward_noise at t_prev
    Tensor stepped = ddim_step(s, zt, eps, t, 12);
    Tensor expect  = forward_noise(s, z0, eps, 12);
    for (size_t i = 0; i < stepped.values().size(); ++i)
        CHECK(stepped.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));

    CHECK_THROWS_AS(ddim_step(s, zt, eps, 10, 10), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(s, zt, eps, 10, -1), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(s, zt, eps, 10, 20), std::invalid_argument);
}

TEST_CASE("ddim trajectory with a perfect toy predictor hits the target") {
    // the analytic oracle: a predictor that always reports the eps consistent
    // with a fixed target z0*, eps = (z_t - sqrt(ab) z0*) / sqrt(1-ab)
    auto s = make_linear_schedule(40, 1e-3, 0.03);
    Tensor target = Tensor({1, 1, 3}, {0.3, -0.6, 0.9});
    Rng rng(9);
    Tensor z = randn({1, 1, 3}, rng);

    auto ts = ddim_timesteps(s.T, 10);
    REQUIRE(ts.front() == s.T);
    REQUIRE(ts.back() == 0);
    for (size_t i = 0; i + 1 < ts.size(); ++i) {
        const int t     = ts[i];
        const double sa = s.sqrt_ab(t), sb = s.sqrt_one_minus_ab(t);
        Tensor eps = Tensor::zeros({1, 1, 3});
        for (size_t j = 0; j < 3; ++j)
            eps.values()[j] = (z.values()[j] - sa * target.values()[j]) / sb;
        z = ddim_step(s, z, eps, t, ts[i + 1]);
    }
    for (size_t j = 0; j < 3; ++j)
        CHECK(std::abs(z.values()[j] - target.values()[j]) < 1e-6);
}

TEST_CASE("sampling is deterministic per seed") {
    Fixture f;
    GuidanceParams gp = f.bound();
    gp.lambda_cfg     = 2.0;
    Tensor a = sample(f.model, gp, f.sched, 10, 99);
    Tensor b = sample(f.model, gp, f.sched, 10, 99);
    CHECK(a.values() == b.values());
    for (double v : a.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    Tensor c = sample(f.model, gp, f.sched, 10, 100);
    CHECK(a.values() != c.values());

    CHECK_THROWS_AS(sample(f.model, gp, f.sched, 0, 1), std::invalid_argument);
}
