#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "perfkit/metrics.hpp"

using namespace perfkit;
using namespace perfkit::metrics;

namespace {

VascularFunction vf(std::vector<double> v, double dt = 1.0)
{
    return VascularFunction(std::move(v), dt);
}

Volume3D mask(std::size_t n, std::size_t from, std::size_t to)
{
    std::vector<double> d(n, 0.0);
    for (std::size_t i = from; i < to; ++i)
        d[i] = 1.0;
    return Volume3D({1, 1, n}, d, Unit::Binary);
}

}  // namespace

TEST_SUITE("metrics")
{
    TEST_CASE("pearson and spearman")
    {
        const std::vector<double> a{1, 4, 2, 8, 5};
        CHECK(pearson_r(a, a) == doctest::Approx(1.0).epsilon(1e-12));

        const std::vector<double> x{1, 2, 3}, y{10, 100, 1000};
        CHECK(spearman_r(x, y) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(pearson_r(x, y) < 1.0);

        std::vector<double> neg(a.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            neg[i] = -a[i];
        CHECK(pearson_r(a, neg) == doctest::Approx(-1.0).epsilon(1e-12));

        const std::vector<double> flat{2, 2, 2};
        CHECK_THROWS_AS(pearson_r(flat, x), ValidationError);
        CHECK_THROWS_AS(pearson_r(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
    }

    TEST_CASE("average ranks share ties")
    {
        const auto r = average_ranks(std::vector<double>{3, 1, 3, 2});
        CHECK(r == std::vector<double>{3.5, 1, 3.5, 2});
    }

    TEST_CASE("spearman is invariant under monotone transforms")
    {
        const std::vector<double> a{0.3, 1.2, -0.7, 2.5, 0.9, 1.7};
        const std::vector<double> b{1.0, 0.2, 0.5, 3.0, 0.1, 2.2};
        std::vector<double> ea(a.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            ea[i] = std::exp(3.0 * a[i]) + 5.0;
        CHECK(spearman_r(ea, b) == doctest::Approx(spearman_r(a, b)).epsilon(1e-12));
    }

    TEST_CASE("tpeak")
    {
        CHECK(tpeak(vf({5, 10, 80, 30})) == 2.0);
        CHECK(tpeak(vf({1, 7, 7, 1}, 2.0)) == 2.0);
        CHECK(tpeak(vf({4, 4, 4})) == 0.0);
    }

    TEST_CASE("ptb")
    {
        const auto p = ptb(vf({40, 40, 40, 120, 190, 90}), 3);
        CHECK(p.ptb == 150.0);
        CHECK(p.baseline == 40.0);
        CHECK(ptb(vf({40, 40, 40, 40}), 3).ptb == 0.0);
        CHECK_THROWS_AS(ptb(vf({1, 2, 3}), 3), ValidationError);
        CHECK_THROWS_AS(ptb(vf({1, 2, 3}), 0), ValidationError);
    }

    TEST_CASE("fwhm")
    {
        const auto a = fwhm(vf({0, 0, 50, 100, 50, 0, 0}), 2);
        CHECK(a.left_s == 2.0);
        CHECK(a.right_s == 4.0);
        CHECK(a.fwhm_s == 2.0);
        CHECK_FALSE(a.truncated);

        const auto b = fwhm(vf({0, 100, 0}), 1);
        CHECK(b.left_s == 0.5);
        CHECK(b.right_s == 1.5);
        CHECK(b.fwhm_s == 1.0);

        const auto c = fwhm(vf({0, 0, 100, 80, 70}), 1);
        CHECK(c.right_s == 4.0);
        CHECK(c.truncated);

        CHECK_THROWS_AS(fwhm(vf({5, 5, 5, 5}), 2), ValidationError);
    }

    TEST_CASE("fwhm, tpeak and ptb under positive affine maps")
    {
        const std::vector<double> base{10, 11, 10, 40, 95, 120, 80, 45, 20, 12, 10};
        std::vector<double> scaled(base.size());
        for (std::size_t i = 0; i < base.size(); ++i)
            scaled[i] = 2.5 * base[i] - 7.0;
        const auto f = vf(base, 0.5), g = vf(scaled, 0.5);
        CHECK(tpeak(g) == tpeak(f));
        CHECK(fwhm(g, 3).fwhm_s == doctest::Approx(fwhm(f, 3).fwhm_s).epsilon(1e-12));
        CHECK(ptb(g, 3).ptb == doctest::Approx(2.5 * ptb(f, 3).ptb).epsilon(1e-12));
    }

    TEST_CASE("mse")
    {
        const std::vector<double> a{1, 2, 3};
        CHECK(mse(a, a) == 0.0);
        CHECK(mse(std::vector<double>{3, 4, 5}, a) == 4.0);
        CHECK(mse(std::vector<double>{0, 0}, std::vector<double>{3, 4}) == 12.5);
        CHECK_THROWS_AS(mse(a, std::vector<double>{1, 2}), ValidationError);
    }

    TEST_CASE("dice and volume error")
    {
        const auto a = mask(40, 0, 10);
        CHECK(dice(a, a) == 1.0);
        CHECK(volume_error(a, a, 1.0).error_ml == 0.0);
        CHECK(dice(a, mask(40, 20, 30)) == 0.0);
        CHECK(dice(mask(40, 0, 0), mask(40, 0, 0)) == 1.0);

        const auto big = mask(40, 0, 30), small = mask(40, 0, 20);
        CHECK(dice(big, small) == doctest::Approx(0.8).epsilon(1e-15));
        CHECK(dice(small, big) == dice(big, small));
        const auto e = volume_error(big, small, 1.0);
        CHECK(e.error_ml == 10.0);
        CHECK(e.abs_error_ml == 10.0);
        CHECK(volume_error(small, big, 0.04).error_ml == doctest::Approx(-0.4));

        CHECK_THROWS_AS(dice(mask(40, 0, 1), mask(41, 0, 1)), ValidationError);
    }

    TEST_CASE("roc auc")
    {
        const std::vector<int> labels{0, 0, 0, 1, 1};
        CHECK(roc_auc(std::vector<double>{1, 2, 3, 4, 5}, labels) == 1.0);
        CHECK(roc_auc(std::vector<double>{5, 4, 3, 2, 1}, labels) == 0.0);
        CHECK(roc_auc(std::vector<double>{7, 7, 7, 7, 7}, labels) == 0.5);
        CHECK_THROWS_AS(roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), ValidationError);

        const std::vector<double> s{0.1, 0.4, 0.35, 0.8, 0.4, 0.2, 0.9};
        const std::vector<int> l{0, 1, 0, 1, 0, 0, 1};
        std::vector<double> neg(s.size());
        for (std::size_t i = 0; i < s.size(); ++i)
            neg[i] = -s[i];
        CHECK(roc_auc(neg, l) == doctest::Approx(1.0 - roc_auc(s, l)).epsilon(1e-15));
    }

    TEST_CASE("roc auc matches a threshold-swept trapezoid")
    {
        const std::vector<double> s{0.1, 0.4, 0.35, 0.8, 0.4, 0.2, 0.9, 0.4, 0.05, 0.6};
        const std::vector<int> l{0, 1, 0, 1, 0, 0, 1, 1, 0, 0};
        std::vector<double> thresholds(s.begin(), s.end());
        thresholds.push_back(1e9);
        std::sort(thresholds.begin(), thresholds.end());
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
        double P = 0, N = 0;
        for (int v : l)
            (v ? P : N) += 1;
        double area = 0.0, prev_fpr = 1.0, prev_tpr = 1.0;
        for (double t : thresholds) {
            double tp = 0, fp = 0;
            for (std::size_t i = 0; i < s.size(); ++i)
                if (s[i] >= t) {
                    tp += l[i];
                    fp += 1 - l[i];
                }
            const double fpr = fp / N, tpr = tp / P;
            area += (prev_fpr - fpr) * (prev_tpr + tpr) / 2.0;
            prev_fpr = fpr;
            prev_tpr = tpr;
        }
        CHECK(roc_auc(s, l) == doctest::Approx(area).epsilon(1e-12));
    }
}
