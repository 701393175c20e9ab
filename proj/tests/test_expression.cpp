#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "orbitlab/expression.hpp"
#include "orbitlab/field_family.hpp"

using orbitlab::Box;
using orbitlab::EvalError;
using orbitlab::Expression;
using orbitlab::FieldFamily;
using orbitlab::ParseError;

namespace {

double eval(const Expression& e, std::vector<double> x) { return e.evaluate(x); }

// Central finite differences, the independent oracle for the derivative ASTs.
double central_diff(const Expression& e, std::vector<double> x, int var, double h = 1e-5) {
    auto xp = x, xm = x;
    xp[static_cast<std::size_t>(var - 1)] += h;
    xm[static_cast<std::size_t>(var - 1)] -= h;
    return (e.evaluate(xp) - e.evaluate(xm)) / (2.0 * h);
}

const std::vector<std::string>& corpus() {
    static const std::vector<std::string> exprs = {
        "1 + 2*abs(x1)",
        "x1*abs(x1)",
        "exp(-1/(x1^2+x2^2))",
        "abs(x2 - x1*abs(x1))",
        "x1^3 - 2*x2^2 + x1*x2",
        "sqrt(x1^2 + x2^2 + 1)",
        "sign(x1)*x2",
        "exp(x1/4)*x2 - 3",
        "(x1 + x2)/(1 + x1^2)",
        "2/x1^3",
    };
    return exprs;
}

}  // namespace

TEST_CASE("parse evaluates with standard precedence") {
    CHECK(eval(Expression::parse("1 + 2*abs(x1)"), {-3.0}) == 7.0);
    CHECK(eval(Expression::parse("x1*abs(x1)"), {2.0}) == 4.0);
    CHECK_THAT(eval(Expression::parse("exp(-1/(x1^2+x2^2))"), {1.0, 0.0}),
               Catch::Matchers::WithinAbs(std::exp(-1.0), 1e-15));
    CHECK(eval(Expression::parse("2 + 3*4"), {0.0}) == 14.0);
    CHECK(eval(Expression::parse("2*3^2"), {0.0}) == 18.0);
    CHECK(eval(Expression::parse("-x1^2"), {3.0}) == -9.0);
    CHECK(eval(Expression::parse("8/4/2"), {0.0}) == 1.0);
    CHECK(eval(Expression::parse("1 - 2 - 3"), {0.0}) == -4.0);
    CHECK(eval(Expression::parse("x1^-1"), {4.0}) == 0.25);
}

TEST_CASE("parse errors carry byte offsets") {
    CHECK_THROWS_AS(Expression::parse("1 + "), ParseError);
    CHECK_THROWS_AS(Expression::parse("foo(x1)"), ParseError);
    CHECK_THROWS_AS(Expression::parse("x0 + 1"), ParseError);
    CHECK_THROWS_AS(Expression::parse("(1 + 2"), ParseError);
    CHECK_THROWS_AS(Expression::parse("1 + 2)"), ParseError);
    try {
        Expression::parse("1 + @");
        FAIL("expected ParseError");
    } catch (const ParseError& err) {
        CHECK(err.offset() == 4);
    }
}

TEST_CASE("variable index beyond dimension is rejected at family assembly") {
    CHECK_THROWS_AS(FieldFamily::parse(2, {{"x3", "0"}}), std::invalid_argument);
    CHECK_NOTHROW(FieldFamily::parse(3, {{"x3", "0", "1"}}));
}

TEST_CASE("parser round-trip preserves evaluation") {
    std::mt19937_64 rng(2026);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (const auto& text : corpus()) {
        const Expression once = Expression::parse(text);
        const Expression twice = Expression::parse(Expression::parse(once.to_string()).to_string());
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> x = {dist(rng), dist(rng)};
            if (text == "2/x1^3" && std::abs(x[0]) < 1e-3) continue;
            if (text == "exp(-1/(x1^2+x2^2))" && std::hypot(x[0], x[1]) < 1e-3) continue;
            const double a = once(x);
            const double b = twice(x);
            REQUIRE(a == b);
        }
    }
}

TEST_CASE("a.e. derivative matches central differences away from kinks") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (const auto& text : corpus()) {
        const Expression e = Expression::parse(text);
        std::vector<Expression> derivs = {e.derivative(1), e.derivative(2)};
        int accepted = 0;
        while (accepted < 100) {
            std::vector<double> x = {dist(rng), dist(rng)};
            if (e.kink_distance(x) < 1e-3) continue;
            if (text == "2/x1^3" && std::abs(x[0]) < 0.3) continue;
            if (text == "exp(-1/(x1^2+x2^2))" && std::hypot(x[0], x[1]) < 0.3) continue;
            ++accepted;
            for (int var = 1; var <= 2; ++var) {
                const double sym = derivs[static_cast<std::size_t>(var - 1)].evaluate(x);
                const double fd = central_diff(e, x, var);
                const double scale = std::max({1.0, std::abs(sym), std::abs(fd)});
                REQUIRE(std::abs(sym - fd) <= 1e-6 * scale);
            }
        }
    }
}

TEST_CASE("derivative examples") {
    // d/dx1 (x1 |x1|) = 2|x1|
    const Expression F = Expression::parse("x1*abs(x1)");
    CHECK(F.derivative(1).evaluate(std::vector<double>{3.0}) == 6.0);

    const Expression c = Expression::parse("5");
    CHECK(c.derivative(1).evaluate(std::vector<double>{1.0}) == 0.0);

    // d/dx1 exp(-1/x1^2) = (2/x1^3) exp(-1/x1^2); at 0.5 this is 16 e^{-4}
    const Expression g = Expression::parse("exp(-1/x1^2)");
    CHECK_THAT(g.derivative(1).evaluate(std::vector<double>{0.5}),
               Catch::Matchers::WithinRel(16.0 * std::exp(-4.0), 1e-12));
}

TEST_CASE("kink conventions: sign(0) = 0 and abs'(0) = 0") {
    const Expression s = Expression::parse("sign(x1)");
    CHECK(s.evaluate(std::vector<double>{0.0}) == 0.0);
    const Expression a = Expression::parse("abs(x1)");
    CHECK(a.derivative(1).evaluate(std::vector<double>{0.0}) == 0.0);
    CHECK(a.kink_distance(std::vector<double>{0.25}) == 0.25);
    CHECK(Expression::parse("x1 + x2").kink_distance(std::vector<double>{0.0, 0.0}) ==
          std::numeric_limits<double>::infinity());
}

TEST_CASE("non-finite evaluation raises EvalError") {
    const Expression inv = Expression::parse("1/x1");
    CHECK_THROWS_AS(inv.evaluate(std::vector<double>{0.0}), EvalError);
    const Expression root = Expression::parse("sqrt(x1)");
    CHECK_THROWS_AS(root.evaluate(std::vector<double>{-1.0}), EvalError);
    // exp(-1/|x|^2) recovers at the origin: the inner overflow feeds exp(-inf) = 0.
    const Expression balan = Expression::parse("exp(-1/(x1^2+x2^2))");
    CHECK(balan.evaluate(std::vector<double>{0.0, 0.0}) == 0.0);
}

TEST_CASE("family evaluation examples") {
    const FieldFamily fam = FieldFamily::parse(
        2, {{"1", "2*abs(x1)"}, {"0", "abs(x2 - x1*abs(x1))"}}, "example-graph");

    auto frame = fam.evaluate(Eigen::Vector2d(1.0, 2.0));
    CHECK(frame.Y(0, 0) == 1.0);
    CHECK(frame.Y(1, 0) == 2.0);
    CHECK(frame.Y(0, 1) == 0.0);
    CHECK(frame.Y(1, 1) == 1.0);

    frame = fam.evaluate(Eigen::Vector2d(0.0, 0.0));
    CHECK(frame.Y.col(0).isApprox(Eigen::Vector2d(1.0, 0.0)));
    CHECK(frame.Y.col(1).norm() == 0.0);

    const FieldFamily axes = FieldFamily::parse(2, {{"1", "0"}, {"0", "1"}});
    CHECK(axes.evaluate(Eigen::Vector2d(5.0, -7.0)).Y.isIdentity(0.0));
}

TEST_CASE("evaluate is deterministic and pure") {
    const FieldFamily fam = FieldFamily::parse(
        2, {{"1", "2*abs(x1)"}, {"0", "abs(x2 - x1*abs(x1))"}});
    const Eigen::Vector2d x(0.37, -1.24);
    const Eigen::MatrixXd first = fam.evaluate(x).Y;
    for (int i = 0; i < 5; ++i) {
        const Eigen::MatrixXd again = fam.evaluate(x).Y;
        REQUIRE((first - again).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("evaluation error names the offending field and component") {
    const FieldFamily fam = FieldFamily::parse(2, {{"1/x1", "0"}, {"0", "1"}});
    try {
        fam.evaluate(Eigen::Vector2d(0.0, 1.0));
        FAIL("expected EvalError");
    } catch (const EvalError& err) {
        const std::string what = err.what();
        CHECK(what.find("field 1") != std::string::npos);
        CHECK(what.find("component 1") != std::string::npos);
    }
}

TEST_CASE("jacobian_ae agrees with finite differences off kinks") {
    const FieldFamily fam = FieldFamily::parse(
        2, {{"1", "2*abs(x1)"}, {"0", "abs(x2 - x1*abs(x1))"}});
    const Eigen::Vector2d x(0.7, 1.9);
    const Eigen::MatrixXd J = fam.jacobian_ae(1, x);
    const double h = 1e-5;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            Eigen::Vector2d xp = x, xm = x;
            xp[b] += h;
            xm[b] -= h;
            const double fd =
                (fam.field_value(1, xp)[a] - fam.field_value(1, xm)[a]) / (2.0 * h);
            REQUIRE_THAT(J(a, b), Catch::Matchers::WithinAbs(fd, 1e-8));
        }
}

TEST_CASE("lipschitz_estimate brackets known constants") {
    const Box box = Box::cube(2, -1.0, 1.0);

    const FieldFamily constant = FieldFamily::parse(2, {{"1", "0"}});
    CHECK(constant.lipschitz_estimate(box, 500, 1)[0] == 0.0);

    const FieldFamily kinked = FieldFamily::parse(2, {{"0", "2*abs(x1)"}});
    const double est = kinked.lipschitz_estimate(box, 2000, 2)[0];
    CHECK(est >= 1.9);
    CHECK(est <= 2.0 + 1e-9);

    const FieldFamily rotation = FieldFamily::parse(2, {{"x2", "-x1"}});
    CHECK(rotation.lipschitz_estimate(box, 2000, 3)[0] <= 1.0 + 1e-9);

    // determinism given the seed
    CHECK(kinked.lipschitz_estimate(box, 500, 42) == kinked.lipschitz_estimate(box, 500, 42));
}

TEST_CASE("jitter_off_kinks moves only kink-locus points") {
    const FieldFamily fam = FieldFamily::parse(
        2, {{"1", "2*abs(x1)"}, {"0", "abs(x2 - x1*abs(x1))"}});
    const Eigen::Vector2d off(0.5, 0.9);
    CHECK(fam.jitter_off_kinks(off) == off);
    const Eigen::Vector2d on(0.0, 0.0);
    const Eigen::VectorXd moved = fam.jitter_off_kinks(on);
    CHECK(moved != on);
    CHECK((moved - on).norm() <= 2e-9);
}
