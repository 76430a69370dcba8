#include <gtest/gtest.h>

#include <map>

#include "head_oracle.hpp"
#include "xilbench/xil/rules.hpp"

using namespace xilbench;

namespace {

Vector random_scores(Rng& rng, std::size_t d) {
    Vector s(d);
    for (double& v : s) v = normal(rng);
    return s;
}

oracle::Dims dims(const LogicHead& h) {
    return {h.num_concepts(), h.num_classes(), h.hidden_per_class(), h.temperature};
}

double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic));
}

// Confounded toy scores: column 0 tracks the label almost perfectly, column 1
// is a noisier true signal, column 2 is noise.
void confounded_scores(std::size_t n, std::uint64_t seed, std::vector<Vector>& S, std::vector<int>& Y) {
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        const double sgn = y ? 1.0 : -1.0;
        S.push_back({sgn * 1.5 + normal(rng, 0.0, 0.2), sgn * 0.8 + normal(rng, 0.0, 0.7), normal(rng)});
        Y.push_back(y);
    }
}

}  // namespace

TEST(LogicHeadForward, UniformColumnNormsGiveUnitAttention) {
    auto h = init_logic_head(3, 2, 2, 1);
    for (std::size_t r = 0; r < h.W1.rows(); ++r)
        for (std::size_t j = 0; j < 3; ++j) h.W1(r, j) = (r % 2 ? -0.5 : 0.5);
    const auto out = forward(h, Vector{0.1, 0.2, 0.3});
    for (const auto& a : out.alpha)
        for (double v : a) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(LogicHeadForward, DeadColumnMakesLogitsInvariant) {
    auto h = init_logic_head(4, 3, 3, 2);
    for (std::size_t r = 0; r < h.W1.rows(); ++r) h.W1(r, 2) = 0.0;
    Vector s{0.3, -1.0, 0.5, 2.0};
    const auto base = forward(h, s).logits;
    for (double v : {-5.0, 0.0, 7.5}) {
        s[2] = v;
        EXPECT_EQ(forward(h, s).logits, base);
    }
}

TEST(LogicHeadForward, MatchesStraightLineOracle) {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
        const auto h = init_logic_head(3, 2, 4, 100 + t, 0.7);
        const Vector s = random_scores(rng, 3);
        const auto got = forward(h, s).logits;
        const auto want = oracle::logits(h.flat_params(), dims(h), s);
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(got[c], want[c], 1e-10);
    }
}

TEST(LogicHeadForward, AttentionMaxIsOne) {
    const auto h = init_logic_head(6, 3, 2, 8);
    for (const auto& a : forward(h, Vector(6, 1.0)).alpha) {
        EXPECT_DOUBLE_EQ(*std::max_element(a.begin(), a.end()), 1.0);
        for (double v : a) EXPECT_GT(v, 0.0);
    }
}

TEST(LogicHeadForward, PermutationInvariance) {
    const auto h = init_logic_head(4, 2, 3, 5);
    const std::vector<std::size_t> perm{2, 0, 3, 1};
    LogicHead g = h;
    for (std::size_t r = 0; r < h.W1.rows(); ++r)
        for (std::size_t j = 0; j < 4; ++j) g.W1(r, j) = h.W1(r, perm[j]);
    const Vector s{0.4, -0.2, 1.1, 0.7};
    Vector sp(4);
    for (std::size_t j = 0; j < 4; ++j) sp[j] = s[perm[j]];
    // Equal up to summation order inside the affine maps.
    const auto a = forward(h, s).logits, b = forward(g, sp).logits;
    for (std::size_t c = 0; c < a.size(); ++c) EXPECT_NEAR(a[c], b[c], 1e-14);
}

TEST(LogicHeadForward, DimensionMismatchIsDataError) {
    const auto h = init_logic_head(3, 2, 2, 1);
    EXPECT_THROW(forward(h, Vector{1.0, 2.0}), DataError);
    EXPECT_THROW(input_gradient(h, Vector(4, 0.0)), DataError);
}

TEST(InputGradient, MatchesFiniteDifferences) {
    Rng rng(17);
    for (int t = 0; t < 30; ++t) {
        const auto h = init_logic_head(5, 3, 3, 200 + t);
        const Vector s = random_scores(rng, 5);
        const auto g = input_gradient(h, s);
        const auto fd = finite_diff_grad(
            [&](const Vector& x) { return oracle::sum_log_probs(h.flat_params(), dims(h), x); }, s, 1e-6);
        for (std::size_t j = 0; j < 5; ++j) EXPECT_LE(rel_err(g[j], fd[j]), 1e-4) << t << "/" << j;
    }
}

TEST(InputGradient, DeadColumnAndConstantHead) {
    auto h = init_logic_head(3, 2, 2, 9);
    for (std::size_t r = 0; r < h.W1.rows(); ++r) h.W1(r, 1) = 0.0;
    EXPECT_EQ(input_gradient(h, Vector{0.5, 0.5, 0.5})[1], 0.0);
    for (double& v : h.W2.data()) v = 0.0;
    for (double v : input_gradient(h, Vector{0.5, -0.3, 2.0})) EXPECT_EQ(v, 0.0);
}

TEST(LossAndGrads, ReducesToCrossEntropy) {
    Rng rng(4);
    const auto h = init_logic_head(3, 2, 2, 11);
    std::vector<Vector> S{random_scores(rng, 3), random_scores(rng, 3)};
    std::vector<int> Y{0, 1};
    TrainConfig cfg;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    const auto table = RuleTable{Matrix(1, 3, 1.0), {}, false};
    const auto r = loss_and_grads(h, S, Y, table, cfg);
    double ce = 0.0;
    for (std::size_t b = 0; b < 2; ++b) {
        const auto z = oracle::logits(h.flat_params(), dims(h), S[b]);
        ce += std::log(std::exp(z[0]) + std::exp(z[1])) - z[static_cast<std::size_t>(Y[b])];
    }
    EXPECT_NEAR(r.terms.total, ce / 2.0, 1e-12);
    EXPECT_NEAR(r.terms.cross_entropy, ce / 2.0, 1e-12);
}

TEST(LossAndGrads, ZeroRuleTableGivesZeroRightReasons) {
    Rng rng(5);
    const auto h = init_logic_head(4, 2, 3, 12);
    std::vector<Vector> S{random_scores(rng, 4), random_scores(rng, 4), random_scores(rng, 4)};
    const auto r = loss_and_grads(h, S, {0, 1, 1}, RuleTable::empty(4), TrainConfig{});
    EXPECT_EQ(r.terms.right_reasons, 0.0);
}

TEST(LossAndGrads, ElasticNetEndpoints) {
    const auto h = init_logic_head(3, 2, 2, 13);
    const std::vector<Vector> S{{0.1, 0.2, 0.3}};
    double l1 = 0.0, l2 = 0.0;
    for (double v : h.flat_params()) l1 += std::abs(v), l2 += v * v;
    TrainConfig cfg;
    cfg.lambda1 = 1.0;
    cfg.lambda2 = 0.0;
    cfg.alpha_mix = 1.0;
    EXPECT_NEAR(loss_terms(h, S, {1}, RuleTable::empty(3), cfg).regularizer, l1, 1e-12);
    cfg.alpha_mix = 0.0;
    EXPECT_NEAR(loss_terms(h, S, {1}, RuleTable::empty(3), cfg).regularizer, l2, 1e-12);
}

TEST(LossAndGrads, ValueMatchesOracle) {
    Rng rng(6);
    const auto h = init_logic_head(4, 2, 2, 14);
    std::vector<Vector> S;
    for (int i = 0; i < 3; ++i) S.push_back(random_scores(rng, 4));
    const std::vector<int> Y{1, 0, 1};
    Matrix H(3, 4);
    H(0, 1) = H(1, 1) = H(2, 3) = 1.0;
    for (auto strategy : {Strategy::rrr, Strategy::l1}) {
        TrainConfig cfg;
        cfg.strategy = strategy;
        const auto r = loss_and_grads(h, S, Y, {H, {}, true}, cfg);
        std::vector<std::vector<double>> g;
        for (const auto& s : S) g.push_back(input_gradient(h, s));
        EXPECT_NEAR(r.terms.total, oracle::objective(h.flat_params(), dims(h), S, Y, H, cfg, 0.0, &g), 1e-9);
        // the oracle's own finite-difference input gradient agrees to FD accuracy
        EXPECT_NEAR(r.terms.total, oracle::objective(h.flat_params(), dims(h), S, Y, H, cfg, 1e-5),
                    1e-4 * std::abs(r.terms.total));
    }
}

TEST(LossAndGrads, GradientsMatchFiniteDifferences) {
    Rng rng(7);
    const auto h = init_logic_head(4, 2, 3, 15);
    std::vector<Vector> S;
    for (int i = 0; i < 3; ++i) S.push_back(random_scores(rng, 4));
    const std::vector<int> Y{0, 1, 1};
    Matrix H(1, 4);
    H(0, 0) = H(0, 2) = 1.0;
    const RuleTable table{H, {}, false};
    for (auto strategy : {Strategy::rrr, Strategy::l1}) {
        TrainConfig cfg;
        cfg.strategy = strategy;
        cfg.lambda2 = 10.0;
        const auto r = loss_and_grads(h, S, Y, table, cfg);
        LogicHead probe = h;
        const auto fd = finite_diff_grad(
            [&](const Vector& th) {
                probe.set_flat_params(th);
                return loss_terms(probe, S, Y, table, cfg).total;
            },
            h.flat_params(), 1e-6);
        for (std::size_t i = 0; i < fd.size(); ++i) EXPECT_LE(rel_err(r.grads[i], fd[i]), 1e-4) << i;
    }
}

TEST(LossAndGrads, Errors) {
    const auto h = init_logic_head(3, 2, 2, 1);
    const std::vector<Vector> S{{0.0, 1.0, 2.0}};
    EXPECT_THROW(loss_and_grads(h, S, {0}, RuleTable::empty(4), TrainConfig{}), DimensionError);
    TrainConfig edit;
    edit.strategy = Strategy::edit_norm;
    EXPECT_THROW(loss_and_grads(h, S, {0}, RuleTable::empty(3), edit), ParameterError);
    TrainConfig neg;
    neg.lambda2 = -1.0;
    EXPECT_THROW(loss_and_grads(h, S, {0}, RuleTable::empty(3), neg), ParameterError);
    EXPECT_THROW(loss_and_grads(h, S, {2}, RuleTable::empty(3), TrainConfig{}), DataError);
}

TEST(Train, ZeroEpochsLeavesHeadUnchanged) {
    std::vector<Vector> S;
    std::vector<int> Y;
    confounded_scores(20, 1, S, Y);
    const auto h = init_logic_head(3, 2, 4, 3);
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto r = train(h, S, Y, RuleTable::empty(3), cfg);
    EXPECT_EQ(r.head, h);
    EXPECT_TRUE(r.history.empty());
}

TEST(Train, EmptyDatasetIsDataError) {
    EXPECT_THROW(train(init_logic_head(3, 2, 2, 0), {}, {}, RuleTable::empty(3), TrainConfig{}), DataError);
}

TEST(Train, DeterministicAndRecordsComponents) {
    std::vector<Vector> S;
    std::vector<int> Y;
    confounded_scores(40, 2, S, Y);
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch = 16;
    const auto table = add_rule(RuleTable::empty(3), "never focus on a", {"a", "b", "c"});
    const auto a = train(init_logic_head(3, 2, 4, 3), S, Y, table, cfg);
    const auto b = train(init_logic_head(3, 2, 4, 3), S, Y, table, cfg);
    EXPECT_EQ(a.head, b.head);
    ASSERT_EQ(a.history.size(), 15u);
    for (const auto& t : a.history) {
        EXPECT_GT(t.cross_entropy, 0.0);
        EXPECT_GT(t.regularizer, 0.0);
        EXPECT_GE(t.right_reasons, 0.0);
        EXPECT_NEAR(t.total, t.cross_entropy + t.regularizer + cfg.lambda2 * t.right_reasons, 1e-9 * t.total);
    }
}

TEST(Train, MaskedGradientIsSuppressed) {
    std::vector<Vector> S;
    std::vector<int> Y;
    confounded_scores(200, 3, S, Y);
    const auto h0 = init_logic_head(3, 2, 4, 21);
    const auto table = add_rule(RuleTable::empty(3), "never focus on conf", {"conf", "signal", "noise"});
    const auto r = train(h0, S, Y, table, TrainConfig{});
    for (const auto& t : r.history) EXPECT_TRUE(std::isfinite(t.total));
    const double before = mean_abs_input_gradient(h0, S)[0];
    const double after = mean_abs_input_gradient(r.head, S)[0];
    EXPECT_LE(after, 0.1 * before) << before << " -> " << after;
    // with a longer undecayed schedule the head still learns from the unmasked signal
    TrainConfig longer;
    longer.epochs = 1000;
    longer.lr_decay = 1.0;
    const auto l = train(h0, S, Y, table, longer);
    EXPECT_LE(mean_abs_input_gradient(l.head, S)[0], 0.1 * before);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < S.size(); ++i) ok += predict(l.head, S[i]) == Y[i];
    EXPECT_GT(static_cast<double>(ok) / static_cast<double>(S.size()), 0.75);
}

TEST(EditNorm, ZeroMaskIsIdentity) {
    const auto h = init_logic_head(4, 2, 3, 31);
    const auto r = intervene_edit_norm(h, Vector(4, 0.0));
    EXPECT_EQ(r.head, h);
    EXPECT_FALSE(r.warning);
}

TEST(EditNorm, MaskedConceptIsDeadAndRowNormsKept) {
    const auto h = init_logic_head(4, 2, 3, 32);
    const auto r = intervene_edit_norm(h, Vector{0.0, 1.0, 0.0, 0.0});
    Vector s{0.2, -0.4, 0.9, 1.3};
    const auto base = forward(r.head, s).logits;
    s[1] = 10.0;
    EXPECT_EQ(forward(r.head, s).logits, base);
    EXPECT_EQ(input_gradient(r.head, s)[1], 0.0);
    for (std::size_t row = 0; row < h.W1.rows(); ++row) {
        double a = 0.0, b = 0.0;
        for (double v : h.W1.row(row)) a += v * v;
        for (double v : r.head.W1.row(row)) b += v * v;
        EXPECT_NEAR(std::sqrt(a), std::sqrt(b), 1e-10);
    }
}

TEST(EditNorm, AllOnesMaskWarns) {
    const auto r = intervene_edit_norm(init_logic_head(2, 2, 2, 1), Vector{1.0, 1.0});
    ASSERT_TRUE(r.warning);
    for (double v : r.head.W1.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(intervene_edit_norm(init_logic_head(2, 2, 2, 1), Vector{1.0}), DimensionError);
}

namespace {

// Class 1 fires iff s0 > 0; W1 columns have equal norms so both concepts get
// attention 1 unless `shrink_other` reduces column 1.
LogicHead rule_head(double other_weight) {
    LogicHead h = init_logic_head(2, 2, 2, 0);
    for (std::size_t c = 0; c < 2; ++c) {
        h.W1(c * 2, 0) = 5.0;
        h.W1(c * 2, 1) = 0.0;
        h.W1(c * 2 + 1, 0) = 0.0;
        h.W1(c * 2 + 1, 1) = other_weight;
        h.b1[c * 2] = h.b1[c * 2 + 1] = 0.0;
        h.W2(c, 0) = c == 1 ? 1.0 : -1.0;
        h.W2(c, 1) = 0.0;
        h.b2[c] = 0.0;
    }
    return h;
}

}  // namespace

TEST(ExtractRules, SingleLiteral) {
    const auto h = rule_head(0.1);
    std::vector<Vector> S{{0.5, 0.3}, {1.0, -0.2}, {0.2, 0.0}};
    const auto r = extract_rules(h, S, {1, 1, 1}, 1, {"rulers", "other"});
    EXPECT_EQ(r.formula, "class ← rulers");
    EXPECT_FALSE(r.warning);
}

TEST(ExtractRules, ThresholdAboveOneIsEmpty) {
    const auto h = rule_head(5.0);
    RuleOptions opt;
    opt.importance_threshold = 1.01;
    EXPECT_EQ(extract_rules(h, {{1.0, 1.0}}, {1}, 1, {"a", "b"}, opt).formula, "");
}

TEST(ExtractRules, FrequencyOrderedDisjunction) {
    const auto h = rule_head(5.0);
    std::vector<Vector> S;
    std::vector<int> Y;
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
        const bool b_on = i % 5 < 3;  // 60 / 40
        S.push_back({uniform(rng, 0.1, 1.0), b_on ? uniform(rng, 0.1, 1.0) : -uniform(rng, 0.0, 1.0)});
        Y.push_back(1);
    }
    // frequency-count oracle
    std::map<std::string, int> counts;
    for (const auto& s : S) counts[s[1] > 0.0 ? "a ∧ b" : "a ∧ ¬b"]++;
    std::vector<std::pair<int, std::string>> ranked;
    for (const auto& [k, v] : counts) ranked.emplace_back(-v, k);
    std::sort(ranked.begin(), ranked.end());
    ASSERT_EQ(ranked.size(), 2u);
    RuleOptions opt;
    opt.samples_threshold = 2;
    const auto r = extract_rules(h, S, Y, 1, {"a", "b"}, opt);
    EXPECT_EQ(r.formula, "class ← " + ranked[0].second + " ∨ " + ranked[1].second);
    EXPECT_EQ(ranked[0].second, "a ∧ b");
}

TEST(ExtractRules, NoCorrectSamplesWarns) {
    const auto h = rule_head(5.0);
    const auto r = extract_rules(h, {{-1.0, 1.0}}, {1}, 1, {"a", "b"});
    EXPECT_EQ(r.formula, "");
    EXPECT_TRUE(r.warning);
}

TEST(Explain, ReportShapes) {
    const auto h = rule_head(5.0);
    const std::vector<Vector> S{{1.0, 0.5}, {-1.0, 0.5}, {0.5, -0.5}};
    const auto rep = explain(h, {"a", "b"}, S, {1, 0, 1});
    EXPECT_EQ(rep.input_gradients.rows(), 3u);
    EXPECT_EQ(rep.alpha.size(), 2u);
    EXPECT_EQ(rep.logic_rules.size(), 2u);
    EXPECT_NEAR(rep.mean_activations[1][0], 0.75, 1e-12);
    for (const auto& rule : rep.logic_rules)
        if (!rule.empty()) {
            EXPECT_EQ(rule.find("rulers"), std::string::npos);
        }
}

TEST(Rules, ParseAndCompile) {
    EXPECT_EQ(parse_rule("never focus on dark_corner"), "dark_corner");
    EXPECT_EQ(parse_rule("  Ignore \"ruler\" "), "ruler");
    EXPECT_THROW(parse_rule("focus on ruler"), ParameterError);
    const std::vector<std::string> names{"irregular_border", "dark_corner", "multi_tone"};
    auto t = add_rule(RuleTable{Matrix(3, 3), {}, true}, "never focus on dark_corner", names);
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(t.H(r, 0), 0.0);
        EXPECT_EQ(t.H(r, 1), 1.0);
        EXPECT_EQ(t.H(r, 2), 0.0);
    }
    EXPECT_EQ(t.rules.size(), 1u);
    EXPECT_THROW(add_rule(t, "never focus on hair", names), ParameterError);
    EXPECT_EQ(rule_mask(t), (Vector{0.0, 1.0, 0.0}));
}
