#include <doctest.h>

#include <cmath>

#include "emosde/gmm_oracle.hpp"
#include "emosde/rng.hpp"
#include "test_util.hpp"

using namespace emosde;

namespace {

GmmOracle small_oracle(int m = 3, double sigma = 0.3) {
    std::vector<std::vector<double>> base = {{0.3, -0.2}, {-0.6, 0.4}};
    std::vector<EmotionProfile> profiles(static_cast<size_t>(m));
    Rng rng(17);
    for (auto& p : profiles) {
        p.offset = {1.4 * rng.normal(), 1.4 * rng.normal()};
        p.noise_std = sigma;
    }
    std::vector<double> priors(static_cast<size_t>(m), 1.0 / m);
    return GmmOracle(base, profiles, priors, NoiseSchedule());
}

// Central finite differences of a scalar field over the frame matrix.
DTensor fd_grad(const std::function<double(const DTensor&)>& f, DTensor x, double h = 1e-5) {
    DTensor g = DTensor::zeros(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double saved = x.data[i];
        x.data[i] = saved + h;
        const double up = f(x);
        x.data[i] = saved - h;
        const double down = f(x);
        x.data[i] = saved;
        g.data[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double rel_err(const DTensor& a, const DTensor& b) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        num = std::max(num, std::abs(a.data[i] - b.data[i]));
        den = std::max(den, std::abs(b.data[i]));
    }
    return num / (den + 1e-12);
}

}  // namespace

TEST_CASE("corpus generation") {
    CorpusParams p;
    p.num_utterances = 55;
    p.num_emotions = 5;

    SUBCASE("sigma = 0 puts frames exactly at class means") {
        CorpusParams q = p;
        q.noise_std = 0.0;
        const Corpus c = generate_corpus(q, 11);
        for (const auto& u : c.utterances) {
            const auto& off = c.manifest.profiles[static_cast<size_t>(u.emotion_id)].offset;
            const auto ftoks = u.frame_tokens();
            for (int f = 0; f < u.n_frames(); ++f)
                for (int d = 0; d < q.dim; ++d) {
                    const double mean =
                        c.manifest.token_base[static_cast<size_t>(ftoks[static_cast<size_t>(f)])]
                                             [static_cast<size_t>(d)] +
                        off[static_cast<size_t>(d)];
                    CHECK(u.frames.at(f, d) == doctest::Approx(mean).epsilon(1e-6));
                }
        }
    }

    SUBCASE("classes are balanced within one utterance") {
        const Corpus c = generate_corpus(p, 12);
        std::vector<int> counts(5, 0);
        for (const auto& u : c.utterances) ++counts[static_cast<size_t>(u.emotion_id)];
        const int lo = *std::min_element(counts.begin(), counts.end());
        const int hi = *std::max_element(counts.begin(), counts.end());
        CHECK(hi - lo <= 1);
        // split covers everything exactly once and is stratified
        CHECK(c.manifest.train_ids.size() + c.manifest.val_ids.size() == c.utterances.size());
    }

    SUBCASE("per-class empirical frame mean approaches token base + offset") {
        CorpusParams q = p;
        q.num_utterances = 400;
        q.vocab_size = 2;
        q.num_emotions = 2;
        const Corpus c = generate_corpus(q, 13);
        // collect frames of (token 0, emotion 0)
        std::vector<double> sum(static_cast<size_t>(q.dim), 0.0);
        int n = 0;
        for (const auto& u : c.utterances) {
            if (u.emotion_id != 0) continue;
            const auto ftoks = u.frame_tokens();
            for (int f = 0; f < u.n_frames(); ++f) {
                if (ftoks[static_cast<size_t>(f)] != 0) continue;
                for (int d = 0; d < q.dim; ++d) sum[static_cast<size_t>(d)] += u.frames.at(f, d);
                ++n;
            }
        }
        REQUIRE(n > 200);
        for (int d = 0; d < q.dim; ++d) {
            const double expect = c.manifest.token_base[0][static_cast<size_t>(d)] +
                                  c.manifest.profiles[0].offset[static_cast<size_t>(d)];
            CHECK(std::abs(sum[static_cast<size_t>(d)] / n - expect) <
                  3.0 * q.noise_std / std::sqrt(static_cast<double>(n)));
        }
    }

    SUBCASE("degenerate config is rejected") {
        CorpusParams q = p;
        q.min_offset_distance = 10.0;  // larger than the sphere diameter
        CHECK_THROWS(generate_corpus(q, 14));
        CorpusParams r = p;
        r.num_emotions = 1;
        CHECK_THROWS_AS(generate_corpus(r, 14), std::domain_error);
    }
}

TEST_CASE("single-component oracle score is the plain Gaussian score") {
    std::vector<std::vector<double>> base = {{0.5, -1.0}};
    std::vector<EmotionProfile> profiles(1);
    profiles[0].offset = {0.2, 0.3};
    profiles[0].noise_std = 0.4;
    const NoiseSchedule sched;
    const GmmOracle oracle(base, profiles, {1.0}, sched);

    Rng rng(3);
    for (int rep = 0; rep < 10; ++rep) {
        const double t = 0.05 + 0.9 * rng.uniform();
        DTensor x = DTensor::zeros({1, 2});
        DTensor mu = DTensor::zeros({1, 2});
        for (auto& v : x.data) v = rng.normal();
        for (auto& v : mu.data) v = rng.normal();
        const MarginalParams mp = sched.marginal_params(t);
        const double var = mp.variance + mp.mean_coeff_x0 * mp.mean_coeff_x0 * 0.16;
        const DTensor s = oracle.score(x, mu, {0}, t, std::nullopt);
        for (int d = 0; d < 2; ++d) {
            const double dm = mp.mean_coeff_x0 * (base[0][static_cast<size_t>(d)] +
                                                  profiles[0].offset[static_cast<size_t>(d)]) +
                              mp.mean_coeff_mu * mu.at(0, d);
            CHECK(s.at(0, d) == doctest::Approx(-(x.at(0, d) - dm) / var).epsilon(1e-12));
        }
    }
}

TEST_CASE("oracle log-density gradients pass finite differences") {
    const GmmOracle oracle = small_oracle();
    const std::vector<int> ftoks = {0, 1, 1};
    Rng rng(21);
    for (int rep = 0; rep < 8; ++rep) {
        const double t = 0.1 + 0.85 * rng.uniform();
        DTensor x = DTensor::zeros({3, 2});
        DTensor mu = DTensor::zeros({3, 2});
        for (auto& v : x.data) v = 0.8 * rng.normal();
        for (auto& v : mu.data) v = 0.5 * rng.normal();

        const DTensor uncond = oracle.score(x, mu, ftoks, t, std::nullopt);
        const DTensor fd_u = fd_grad(
            [&](const DTensor& xx) { return oracle.log_density(xx, mu, ftoks, t, std::nullopt); }, x);
        CHECK(rel_err(uncond, fd_u) < 1e-6);

        const int e = rep % oracle.num_emotions();
        const DTensor cond = oracle.score(x, mu, ftoks, t, e);
        const DTensor fd_c =
            fd_grad([&](const DTensor& xx) { return oracle.log_density(xx, mu, ftoks, t, e); }, x);
        CHECK(rel_err(cond, fd_c) < 1e-6);

        // The posterior log-gradient is a difference of two scores and decays
        // to zero when one class saturates, so the error is measured against
        // the score scale rather than the (possibly vanishing) gradient.
        const DTensor pg = oracle.posterior_log_grad(x, mu, ftoks, t, e);
        const DTensor fd_p =
            fd_grad([&](const DTensor& xx) { return oracle.log_posterior(xx, mu, ftoks, t, e); }, x);
        const double scale = std::max({max_abs(pg), max_abs(fd_p), max_abs(cond)});
        CHECK(max_abs_diff(pg, fd_p) / (scale + 1e-9) < 1e-6);
    }
}

TEST_CASE("Bayes identity in closed form") {
    // cond score - uncond score = grad log posterior, for all classes
    const GmmOracle oracle = small_oracle(4);
    const std::vector<int> ftoks = {1, 0};
    Rng rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        const double t = 0.02 + 0.96 * rng.uniform();
        DTensor x = DTensor::zeros({2, 2});
        DTensor mu = DTensor::zeros({2, 2});
        for (auto& v : x.data) v = 2.0 * rng.normal();
        for (auto& v : mu.data) v = rng.normal();
        const DTensor uncond = oracle.score(x, mu, ftoks, t, std::nullopt);
        for (int e = 0; e < oracle.num_emotions(); ++e) {
            const DTensor cond = oracle.score(x, mu, ftoks, t, e);
            const DTensor pg = oracle.posterior_log_grad(x, mu, ftoks, t, e);
            DTensor lhs = cond;
            for (size_t i = 0; i < lhs.data.size(); ++i) lhs.data[i] -= uncond.data[i];
            CHECK(rel_err(lhs, pg) < 1e-10);
        }
    }
}

TEST_CASE("posterior properties") {
    SUBCASE("equidistant equal-prior components give equal posteriors") {
        std::vector<std::vector<double>> base = {{0.0, 0.0}};
        std::vector<EmotionProfile> profiles(3);
        profiles[0].offset = {1.0, 0.0};
        profiles[1].offset = {-1.0, 0.0};
        profiles[2].offset = {0.0, 40.0};  // far away
        for (auto& p : profiles) p.noise_std = 0.3;
        const GmmOracle oracle(base, profiles, {1.0 / 3, 1.0 / 3, 1.0 / 3}, NoiseSchedule());
        DTensor x = DTensor::zeros({1, 2});  // equidistant from +-1 offsets
        DTensor mu = DTensor::zeros({1, 2});
        const auto post = oracle.posterior(x, mu, {0}, 0.123);
        CHECK(post[0] == doctest::Approx(post[1]).epsilon(1e-12));
        CHECK(post[2] < 1e-6);
    }

    SUBCASE("posterior approaches the prior as t -> 1") {
        std::vector<std::vector<double>> base = {{0.2, -0.4}};
        std::vector<EmotionProfile> profiles(2);
        profiles[0].offset = {1.0, 0.5};
        profiles[1].offset = {-1.0, -0.5};
        for (auto& p : profiles) p.noise_std = 0.3;
        const GmmOracle oracle(base, profiles, {0.7, 0.3}, NoiseSchedule());
        Rng rng(8);
        DTensor x = DTensor::zeros({1, 2});
        DTensor mu = DTensor::zeros({1, 2});
        for (auto& v : x.data) v = rng.normal();
        for (auto& v : mu.data) v = rng.normal();
        const auto post = oracle.posterior(x, mu, {0}, 1.0);
        CHECK(std::abs(post[0] - 0.7) < 0.02);
        CHECK(std::abs(post[1] - 0.3) < 0.02);
    }

    SUBCASE("posterior rows live on the simplex") {
        const GmmOracle oracle = small_oracle(5);
        Rng rng(9);
        for (int rep = 0; rep < 10; ++rep) {
            DTensor x = DTensor::zeros({2, 2});
            DTensor mu = DTensor::zeros({2, 2});
            for (auto& v : x.data) v = 3.0 * rng.normal();
            for (auto& v : mu.data) v = rng.normal();
            const auto post = oracle.posterior(x, mu, {0, 1}, 0.3 + 0.6 * rng.uniform());
            double total = 0.0;
            for (double p : post) {
                CHECK(p >= 0.0);
                total += p;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("small sigma, small t: score points toward the nearest class mean") {
    const double sigma = 1e-3;
    std::vector<std::vector<double>> base = {{0.0, 0.0}};
    std::vector<EmotionProfile> profiles(2);
    profiles[0].offset = {1.0, 0.0};
    profiles[1].offset = {-1.0, 0.0};
    for (auto& p : profiles) p.noise_std = sigma;
    const GmmOracle oracle(base, profiles, {0.5, 0.5}, NoiseSchedule());

    DTensor x = DTensor::zeros({1, 2});
    x.at(0, 0) = 0.9;  // near class 0 at (1, 0)
    x.at(0, 1) = 0.05;
    DTensor mu = DTensor::zeros({1, 2});
    const DTensor s = oracle.score(x, mu, {0}, 1e-3, std::nullopt);
    const double to_mean[2] = {1.0 - x.at(0, 0), 0.0 - x.at(0, 1)};
    const double dot = s.at(0, 0) * to_mean[0] + s.at(0, 1) * to_mean[1];
    const double ns = std::hypot(s.at(0, 0), s.at(0, 1));
    const double nm = std::hypot(to_mean[0], to_mean[1]);
    CHECK(dot / (ns * nm) > 0.999);
}

TEST_CASE("oracle validates its inputs") {
    const GmmOracle oracle = small_oracle();
    DTensor x = DTensor::zeros({1, 2});
    DTensor mu = DTensor::zeros({1, 2});
    CHECK_THROWS(oracle.score(x, mu, {0}, 1.5, std::nullopt));   // t out of range
    CHECK_THROWS(oracle.score(x, mu, {7}, 0.5, std::nullopt));   // unknown token
    CHECK_THROWS(oracle.score(x, mu, {0, 0}, 0.5, std::nullopt));  // frame count mismatch
    CHECK_THROWS(oracle.posterior_log_grad(x, mu, {0}, 0.5, 9));  // emotion out of range
    CHECK_THROWS(GmmOracle({{0.0}}, {EmotionProfile{{0.0}, 0.3}}, {0.5}, NoiseSchedule()));
}
