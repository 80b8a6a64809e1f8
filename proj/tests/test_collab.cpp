#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"

#include "colearn/autograd/gradcheck.hpp"
#include "colearn/collab/collab.hpp"

using namespace colearn;
using namespace colearn::collab;
namespace fs = std::filesystem;

namespace {

model::cnn_config tiny_cnn() {
    model::cnn_config c;
    c.widths = {2, 3, 3, 4};
    c.fc = {6, 5, 1};
    c.crop = 8;
    return c;
}

model::gnn_config tiny_gnn() {
    model::gnn_config g;
    g.widths = {3, 4, 4, 5};
    g.edge_hidden = 3;
    g.fc = {6, 5, 1};
    return g;
}

experiment_config tiny_experiment(std::uint64_t seed) {
    experiment_config e;
    e.cnn = tiny_cnn();
    e.gnn = tiny_gnn();
    e.train.epochs = 3;
    e.train.batch_size = 4;
    e.train.n_points = 16;
    e.train.seed = seed;
    return e;
}

std::vector<data::volume_sample> tiny_cohort(std::size_t n, std::uint64_t seed) {
    data::cohort_spec spec;
    spec.n_samples = n;
    spec.dims = {12, 12, 12};
    spec.class_ratio = 0.4;
    spec.seed = seed;
    return data::generate_cohort(spec);
}

ag::tensor column(std::vector<real> v) {
    const std::size_t n = v.size();
    return ag::tensor::from({n, 1}, std::move(v));
}

model::branch_output leaf_output(ag::tensor prob, ag::tensor latent) {
    model::branch_output o;
    o.probability = std::move(prob);
    o.latent = std::move(latent);
    return o;
}

} // namespace

TEST_CASE("bce_pair_loss examples") {
    CHECK(bce_pair_loss(1, 0.5, 0.5) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(std::abs(bce_pair_loss(1, 0.5, 0.5) - 1.386294) < 1e-6);
    CHECK(std::abs(bce_pair_loss(0, 0.5, 0.1) - 0.798508) < 1e-6);
    CHECK(bce_pair_loss(0, 0.5, 0.1) == doctest::Approx(-(std::log(0.5) + std::log(0.9))).epsilon(1e-12));
    CHECK(bce_pair_loss(1, 1.0 - 1e-7, 1.0 - 1e-7) <= 3e-7);
    // Inputs beyond the clamp behave like the clamp boundary.
    CHECK(bce_pair_loss(1, 1.0, 1.0) == bce_pair_loss(1, 1.0 - 1e-7, 1.0 - 1e-7));
    CHECK(std::isfinite(bce_pair_loss(1, 0.0, 0.0)));
}

TEST_CASE("bce is non-negative and a batch mean") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int y = static_cast<int>(rng() % 2);
        CHECK(bce_pair_loss(y, u(rng), u(rng)) >= 0.0);
    }
    const auto batch = bce_pair_loss(column({1, 0}), column({0.5, 0.3}), column({0.2, 0.6})).item();
    CHECK(batch == doctest::Approx(0.5 * (bce_pair_loss(1, 0.5, 0.2) + bce_pair_loss(0, 0.3, 0.6))).epsilon(1e-12));
}

TEST_CASE("kl_pair_loss examples and identities") {
    const auto zu = ag::tensor::from({1, 2}, {0.0, 0.0});
    const auto zv = ag::tensor::from({1, 2}, {0.0, std::log(3.0)});
    // p = (1/2, 1/2), q = (1/4, 3/4)
    const real hand = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0) + 0.25 * std::log(0.5) + 0.75 * std::log(1.5);
    CHECK(std::abs(kl_pair_loss(zu, zv).item() - 0.27465) < 1e-5);
    CHECK(kl_pair_loss(zu, zv).item() == doctest::Approx(hand).epsilon(1e-12));

    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t b = 1 + rng() % 4, f = 2 + rng() % 12;
        std::vector<real> a(b * f), c(b * f);
        for (auto& v : a) v = g(rng);
        for (auto& v : c) v = g(rng);
        const auto ta = ag::tensor::from({b, f}, a), tc = ag::tensor::from({b, f}, c);
        const real ab = kl_pair_loss(ta, tc).item();
        CHECK(ab == kl_pair_loss(tc, ta).item());
        CHECK(ab >= 0.0);
        CHECK(kl_pair_loss(ta, ta).item() == 0.0);
        const real shift = g(rng) * 5.0;
        auto shifted = a;
        for (auto& v : shifted) v += shift;
        CHECK(std::abs(kl_pair_loss(ag::tensor::from({b, f}, shifted), tc).item() - ab) <= 1e-9);
    }
    CHECK_THROWS_AS(kl_pair_loss(ag::tensor::from({1, 2}, {0, 0}), ag::tensor::from({1, 3}, {0, 0, 0})), ag::shape_error);
}

TEST_CASE("total_loss composition") {
    const auto y = column({1, 0, 1});
    const auto u = leaf_output(column({0.7, 0.2, 0.4}), ag::tensor::from({3, 2}, {0.1, 0.5, -1.0, 2.0, 0.3, 0.3}));
    const auto v = leaf_output(column({0.6, 0.1, 0.9}), ag::tensor::from({3, 2}, {1.0, -0.5, 0.0, 0.0, 2.0, 0.1}));
    const real bce = bce_pair_loss(y, u.probability, v.probability).item();
    const real kl = kl_pair_loss(u.latent, v.latent).item();

    const auto zero = total_loss(y, u, v, 0.0);
    CHECK(zero.total.item() == bce);
    const auto l = total_loss(y, u, v, 0.7);
    CHECK(l.bce == bce);
    CHECK(l.kl == kl);
    CHECK(std::abs(l.total.item() - (l.bce + l.lambda * l.kl)) <= 1e-12);

    const auto same = total_loss(y, u, leaf_output(v.probability, u.latent), 1.0);
    CHECK(same.kl == 0.0);
    CHECK(same.total.item() == same.bce);

    // Single-branch arms only need their own output.
    const auto cnn = total_loss(y, u, model::branch_output{}, 1.0, arm::cnn_only);
    CHECK(cnn.total.item() == doctest::Approx(bce_loss(y, u.probability).item()).epsilon(1e-15));
    CHECK(cnn.kl == 0.0);
}

TEST_CASE("total_loss gradient wrt branch outputs and latents") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> p(0.05, 0.95);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<real> pu(4), pv(4), zu(4 * 6), zv(4 * 6);
    for (auto& x : pu) x = p(rng);
    for (auto& x : pv) x = p(rng);
    for (auto& x : zu) x = g(rng);
    for (auto& x : zv) x = g(rng);
    const auto y = column({1, 0, 0, 1});
    std::vector<ag::tensor> wrt{column(pu), column(pv), ag::tensor::from({4, 6}, zu), ag::tensor::from({4, 6}, zv)};
    auto f = [&] { return total_loss(y, leaf_output(wrt[0], wrt[2]), leaf_output(wrt[1], wrt[3]), 1.0).total; };
    const auto report = ag::finite_difference_check(f, wrt, 1e-6);
    MESSAGE("max relative error " << report.max_relative_error);
    CHECK(report.max_relative_error <= 1e-6);
}

TEST_CASE("total_loss gradient through both branches") {
    auto s = model::init_params(tiny_cnn(), tiny_gnn(), 31);
    const auto cohort = tiny_cohort(2, 5);
    std::vector<model::prepared_sample> prepared;
    for (const auto& v : cohort) prepared.push_back(model::prepare_sample(v, s.cnn, s.gnn, 16, 2));
    const model::crop_input* crops[] = {&prepared[0].crop, &prepared[1].crop};
    const model::graph_hierarchy* graphs[] = {&prepared[0].graphs, &prepared[1].graphs};
    const auto x = model::stack_crops(crops);
    const auto y = column({static_cast<real>(prepared[0].label), static_cast<real>(prepared[1].label)});

    auto f = [&] {
        ag::rng_t drop(17);
        const auto u = model::cnn_forward(s, x, ag::mode::train, drop);
        const auto v = model::gnn_forward(s, graphs, ag::mode::train, drop);
        return total_loss(y, u, v, 1.0).total;
    };
    std::vector<ag::tensor> wrt;
    for (const auto& p : s.params) wrt.push_back(p.value);
    const auto report = ag::finite_difference_check(f, wrt, 1e-5, 1e-6);
    MESSAGE("max relative error " << report.max_relative_error << " at " << s.params[report.worst_tensor].name << "["
                                  << report.worst_index << "]");
    CHECK(report.max_relative_error <= 1e-4);
}

TEST_CASE("lr_at schedule") {
    train_config c;
    CHECK(lr_at(0, c) == doctest::Approx(0.001).epsilon(1e-15));
    CHECK(lr_at(199, c) == doctest::Approx(0.0001).epsilon(1e-12));
    CHECK(0.5 * (lr_at(99, c) + lr_at(100, c)) == doctest::Approx(0.00055).epsilon(1e-12));
    CHECK_THROWS_AS(lr_at(200, c), std::out_of_range);
    for (std::size_t e = 1; e < c.epochs; ++e) CHECK(lr_at(e, c) <= lr_at(e - 1, c));
    c.epochs = 1;
    CHECK(lr_at(0, c) == c.lr_start);
}

TEST_CASE("train_config validation") {
    train_config c;
    CHECK_NOTHROW(validate(c));
    auto bad = c;
    bad.lr_end = 0.01;
    CHECK_THROWS(validate(bad));
    bad = c;
    bad.patience = 0;
    CHECK_THROWS(validate(bad));
    bad = c;
    bad.n_points = 8;
    CHECK_THROWS(validate(bad));
    bad = c;
    bad.batch_size = 1;
    CHECK_THROWS(validate(bad));
}

TEST_CASE("adam_step") {
    train_config c;
    c.weight_decay = 0.0;
    SUBCASE("zero gradient leaves parameters unchanged") {
        auto s = model::init_params(tiny_cnn(), tiny_gnn(), 1);
        const auto before = s.clone();
        for (auto& p : s.params) std::fill(p.value.mutable_grad().begin(), p.value.mutable_grad().end(), 0.0);
        adam_step(s, 1e-3, c);
        for (std::size_t i = 0; i < s.params.size(); ++i) {
            std::span<const real> a = s.params[i].value.data(), b = before.params[i].value.data();
            CHECK(std::equal(a.begin(), a.end(), b.begin()));
        }
        CHECK(s.step == 1);
    }
    SUBCASE("first step with unit gradient moves each weight by lr") {
        auto s = model::init_params(tiny_cnn(), tiny_gnn(), 1);
        const auto before = s.clone();
        for (auto& p : s.params) std::fill(p.value.mutable_grad().begin(), p.value.mutable_grad().end(), 1.0);
        adam_step(s, 1e-3, c);
        real worst = 0.0;
        for (std::size_t i = 0; i < s.params.size(); ++i) {
            std::span<const real> a = s.params[i].value.data(), b = before.params[i].value.data();
            for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, std::abs((b[j] - a[j]) - 1e-3));
        }
        // float rounding of the stored weights dominates
        CHECK(worst < 1e-6);
    }
    SUBCASE("weights without a gradient are skipped") {
        auto s = model::init_params(tiny_cnn(), tiny_gnn(), 1);
        const auto h = model::parameter_hash(s, "gnn.");
        c.weight_decay = 0.5;
        for (auto& p : s.params)
            if (p.name.rfind("cnn.", 0) == 0) std::fill(p.value.mutable_grad().begin(), p.value.mutable_grad().end(), 0.3);
        adam_step(s, 1e-2, c);
        CHECK(model::parameter_hash(s, "gnn.") == h);
    }
    SUBCASE("non-finite gradient names the parameter") {
        auto s = model::init_params(tiny_cnn(), tiny_gnn(), 1);
        s.params[3].value.mutable_grad()[0] = std::nan("");
        try {
            adam_step(s, 1e-3, c);
            FAIL("expected training_error");
        } catch (const training_error& e) {
            CHECK(std::string(e.what()).find(s.params[3].name) != std::string::npos);
        }
    }
    SUBCASE("ten identical steps are bit-identical") {
        auto run = [&] {
            auto s = model::init_params(tiny_cnn(), tiny_gnn(), 4);
            std::mt19937_64 rng(9);
            std::normal_distribution<double> g(0.0, 1.0);
            for (int step = 0; step < 10; ++step) {
                for (auto& p : s.params)
                    for (auto& v : p.value.mutable_grad()) v = g(rng);
                adam_step(s, lr_at(static_cast<std::size_t>(step), train_config{}), c);
            }
            return s;
        };
        const auto a = run(), b = run();
        for (std::size_t i = 0; i < a.params.size(); ++i) {
            const auto x = a.params[i].value.data(), y = b.params[i].value.data();
            CHECK(std::equal(x.begin(), x.end(), y.begin()));
            CHECK(a.params[i].m == b.params[i].m);
            CHECK(a.params[i].v == b.params[i].v);
        }
    }
}

TEST_CASE("report_from_confusion") {
    const auto r = report_from_confusion(9, 2, 8, 1);
    CHECK(r.accuracy == doctest::Approx(85.0));
    CHECK(r.sensitivity == doctest::Approx(90.0));
    CHECK(r.specificity == doctest::Approx(80.0));
    const auto j = to_json(r);
    CHECK(j["accuracy"] == 85.0);
    CHECK(j["tp"] == 9);

    const auto perfect = report_from_confusion(4, 0, 6, 0);
    CHECK(perfect.accuracy == 100.0);
    CHECK(perfect.sensitivity == 100.0);
    CHECK(perfect.specificity == 100.0);

    const auto no_positives = report_from_confusion(0, 1, 3, 0);
    CHECK(std::isnan(no_positives.sensitivity));
    CHECK(to_json(no_positives)["sensitivity"].is_null());

    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t tp = rng() % 50, fp = rng() % 50, tn = rng() % 50, fn = rng() % 50 + 1;
        const auto q = report_from_confusion(tp, fp, tn, fn);
        const auto total = static_cast<real>(tp + fp + tn + fn);
        CHECK(q.accuracy == 100.0 * static_cast<real>(tp + tn) / total);
        CHECK(q.sensitivity == 100.0 * static_cast<real>(tp) / static_cast<real>(tp + fn));
        if (tn + fp > 0) CHECK(q.specificity == 100.0 * static_cast<real>(tn) / static_cast<real>(tn + fp));
        CHECK(q.accuracy >= 0.0);
        CHECK(q.accuracy <= 100.0);
    }
}

TEST_CASE("evaluate") {
    auto s = model::init_params(tiny_cnn(), tiny_gnn(), 6);
    const auto cfg = tiny_experiment(6);
    const auto data = prepare_all(tiny_cohort(6, 2), cfg);
    REQUIRE(data.size() == 6);

    const auto r = evaluate(s, data, arm::collaborative);
    CHECK(r.tp + r.fp + r.tn + r.fn == 6);
    CHECK(r.probabilities.size() == 6);
    CHECK(r.ids.front() == data.front().id);
    CHECK_THROWS(evaluate(s, dataset{}, arm::collaborative));

    const auto cnn = evaluate(s, data, arm::cnn_only);
    const auto gnn = evaluate(s, data, arm::gnn_only);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(r.probabilities[i] == doctest::Approx(0.5 * (cnn.probabilities[i] + gnn.probabilities[i])).epsilon(1e-14));
    }

    // Replacing every GNN weight leaves a CNN-only report untouched.
    const auto other = model::init_params(tiny_cnn(), tiny_gnn(), 99);
    for (std::size_t i = 0; i < s.params.size(); ++i)
        if (s.params[i].name.rfind("gnn.", 0) == 0) s.params[i].value = other.params[i].value;
    CHECK(evaluate(s, data, arm::cnn_only).probabilities == cnn.probabilities);
    CHECK(evaluate(s, data, arm::gnn_only).probabilities != gnn.probabilities);
}

TEST_CASE("train: determinism, history and the early stopping rule") {
    auto cfg = tiny_experiment(3);
    const auto cohort = tiny_cohort(12, 4);
    const dataset fit = prepare_all({cohort.begin(), cohort.begin() + 8}, cfg);
    const dataset val = prepare_all({cohort.begin() + 8, cohort.end()}, cfg);

    cfg.train.epochs = 4;
    const auto a = train(model::init_params(cfg.cnn, cfg.gnn, 3), fit, val, cfg.train);
    const auto b = train(model::init_params(cfg.cnn, cfg.gnn, 3), fit, val, cfg.train);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t e = 0; e < a.history.size(); ++e) {
        CHECK(a.history[e].val_loss == b.history[e].val_loss);
        CHECK(a.history[e].train_bce == b.history[e].train_bce);
        CHECK(a.history[e].lr == lr_at(e, cfg.train));
        CHECK(a.history[e].train_kl >= 0.0);
    }
    CHECK(model::parameter_hash(a.state, "") == model::parameter_hash(b.state, ""));

    // A large constant step makes validation loss wander; whatever the
    // trajectory, training must stop `patience` epochs after the best one and
    // hand back that epoch's weights.
    cfg.train.epochs = 40;
    cfg.train.patience = 3;
    cfg.train.lr_start = cfg.train.lr_end = 0.2;
    auto run = train(model::init_params(cfg.cnn, cfg.gnn, 3), fit, val, cfg.train);
    const auto& h = run.history;
    std::size_t argmin = 0;
    for (std::size_t e = 1; e < h.size(); ++e)
        if (h[e].val_loss < h[argmin].val_loss) argmin = e;
    CHECK(run.best_epoch == argmin);
    if (h.size() < cfg.train.epochs) CHECK(h.size() - 1 == run.best_epoch + cfg.train.patience);
    for (std::size_t e = run.best_epoch + 1; e < h.size(); ++e) CHECK(h[e].val_loss >= h[run.best_epoch].val_loss);
    CHECK(validation_loss(run.state, val, cfg.train, arm::collaborative).first == h[run.best_epoch].val_loss);

    const fs::path dir = fs::temp_directory_path() / "colearn_test_history";
    write_history(h, dir / "history.jsonl");
    std::ifstream in(dir / "history.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.size() == 6);
        CHECK(j["epoch"] == lines);
        ++lines;
    }
    CHECK(lines == h.size());
    fs::remove_all(dir);

    CHECK_THROWS(train(model::init_params(cfg.cnn, cfg.gnn, 3), dataset(fit.begin(), fit.begin() + 1), val, cfg.train));
}

TEST_CASE("cross_validate arithmetic and reproducibility") {
    auto cfg = tiny_experiment(5);
    cfg.train.epochs = 2;
    const auto pool = tiny_cohort(25, 8);
    const auto cv = cross_validate(pool, 5, cfg);
    REQUIRE(cv.folds.size() == 5);
    real mean = 0.0;
    for (const auto& r : cv.folds) {
        CHECK(r.tp + r.fp + r.tn + r.fn == 5);
        mean += r.accuracy;
    }
    CHECK(std::abs(cv.mean_accuracy - mean / 5.0) <= 1e-12);
    const auto again = cross_validate(pool, 5, cfg);
    CHECK(again.mean_accuracy == cv.mean_accuracy);
    CHECK((again.mean_sensitivity == cv.mean_sensitivity || (std::isnan(again.mean_sensitivity) && std::isnan(cv.mean_sensitivity))));
}

TEST_CASE("ablate: table shape and branch isolation") {
    auto cfg = tiny_experiment(7);
    cfg.train.epochs = 2;
    const auto cohort = tiny_cohort(20, 9);
    const std::vector<data::volume_sample> pool(cohort.begin(), cohort.begin() + 15), test(cohort.begin() + 15, cohort.end());
    const auto rows = ablate(pool, test, cfg);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].which == arm::cnn_only);
    CHECK(rows[1].which == arm::gnn_only);
    CHECK(rows[2].which == arm::collaborative);

    const auto init = model::init_params(cfg.cnn, cfg.gnn, cfg.train.seed);
    const auto cnn0 = model::parameter_hash(init, "cnn."), gnn0 = model::parameter_hash(init, "gnn.");
    CHECK(rows[0].gnn_hash == gnn0);
    CHECK(rows[0].cnn_hash != cnn0);
    CHECK(rows[1].cnn_hash == cnn0);
    CHECK(rows[1].gnn_hash != gnn0);
    CHECK(rows[2].cnn_hash != cnn0);
    CHECK(rows[2].gnn_hash != gnn0);

    const auto j = to_json(rows);
    REQUIRE(j["rows"].size() == 3);
    CHECK(j["rows"][0]["model"] == "CNN only");
    CHECK(j["rows"][1]["model"] == "GNN only");
    CHECK(j["rows"][2]["model"] == "Collaborative framework");
    for (const auto& r : j["rows"])
        for (const char* split : {"val", "test"})
            for (const char* k : {"accuracy", "sensitivity", "specificity"}) CHECK(r[split].contains(k));
}

TEST_CASE("arm names") {
    CHECK(arm_from_string("average") == arm::collaborative);
    CHECK(arm_from_string("cnn") == arm::cnn_only);
    CHECK(arm_from_string("gnn") == arm::gnn_only);
    CHECK_THROWS_AS(arm_from_string("max"), std::invalid_argument);
    for (arm a : {arm::cnn_only, arm::gnn_only, arm::collaborative}) CHECK(arm_from_string(to_string(a)) == a);
}
