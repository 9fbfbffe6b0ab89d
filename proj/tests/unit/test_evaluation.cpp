#include <doctest.h>

#include "oscar/error.hpp"
#include "oscar/evaluation.hpp"
#include "oscar/numerics/rng.hpp"

using namespace oscar;

namespace {

FederatedSplit small_split() {
    CorpusConfig c;
    c.n_categories = 3;
    c.n_domains = 2;
    c.n_clients = 2;
    c.images_per_category = 5;
    c.test_images_per_category = 4;
    c.master_seed = 8;
    return build_federated_split(c, SplitMode::common);
}

ClassifierConfig tiny() {
    ClassifierConfig c;
    c.hidden = {8};
    c.max_epochs = 2;
    c.patience = 1;
    return c;
}

}  // namespace

TEST_CASE("top1: identities") {
    const std::vector<int> y{0, 1, 2, 1};
    CHECK(top1_accuracy(y, y) == 1.0);
    CHECK(top1_accuracy(std::vector<int>{1, 2, 0, 0}, y) == 0.0);
    CHECK(top1_accuracy(std::vector<int>{0, 1, 0, 0}, y) == 0.5);
    CHECK_THROWS_AS(top1_accuracy(std::vector<int>{}, std::vector<int>{}), Error);
    CHECK_THROWS_AS(top1_accuracy(std::vector<int>{1}, y), ShapeError);
}

TEST_CASE("top1: uniformly random predictions over 8 classes sit near chance") {
    RngStream rng(3, "chance");
    std::vector<int> pred(2000), y(2000);
    for (int i = 0; i < 2000; ++i) {
        pred[i] = static_cast<int>(rng.uniform_index(8));
        y[i] = static_cast<int>(rng.uniform_index(8));
    }
    CHECK(std::abs(top1_accuracy(pred, y) - 0.125) < 0.03);
}

TEST_CASE("global classifier: missing class and undersized data are errors") {
    const auto split = small_split();
    Dataset syn = split.train[0];
    for (auto& img : syn.images) img.domain = kSyntheticDomain;
    RngStream rng(1, "g");
    CHECK_THROWS_WITH(train_global_classifier(syn, 4, tiny(), rng), "class 3 absent from synthesized data");
    Dataset two = syn;
    two.images.resize(2);
    CHECK_THROWS_AS(train_global_classifier(two, 3, tiny(), rng), Error);
}

TEST_CASE("evaluate: per-client columns, digest, synthetic test images rejected") {
    const auto split = small_split();
    RngStream rng(2, "m");
    const auto model = train_classifier(split.train[0], 3, tiny(), rng, "client data");
    const auto r = evaluate_model("x", model, split);
    REQUIRE(r.per_client.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) CHECK(r.per_client[k] == top1_accuracy(model, split.test[k]));
    CHECK(r.test_digest == test_sets_digest(split));
    CHECK(r.pooled == doctest::Approx(r.average()));  // equal-sized test sets

    auto bad = split;
    bad.test[1].images[0].domain = kSyntheticDomain;
    CHECK_THROWS_AS(evaluate_model("x", model, bad), Error);
    bad = split;
    bad.test[0].images.clear();
    CHECK_THROWS_AS(evaluate_model("x", model, bad), Error);
}

TEST_CASE("report: average, digest mismatch, deterministic CSV") {
    MethodResult a;
    a.method = "oscar";
    a.per_client = {0.5, 0.7};
    a.pooled = 0.6;
    a.test_digest = "d";
    CHECK(a.average() == doctest::Approx(0.6));
    MethodResult b = a;
    b.method = "fedavg";
    const auto t = build_report({a, b}, 7);
    CHECK(t.to_csv() == build_report({a, b}, 7).to_csv());
    CHECK(t.to_csv().rfind("method,client_1,client_2,avg,pooled", 0) == 0);
    b.test_digest = "e";
    CHECK_THROWS_AS(build_report({a, b}, 7), Error);
    b = a;
    b.per_client = {0.5};
    CHECK_THROWS_AS(build_report({a, b}, 7), Error);
    b = a;
    b.per_client = {0.5, 1.5};
    CHECK_THROWS_AS(build_report({b}, 7), Error);
    CHECK_THROWS_AS(build_report({}, 7), Error);
}

TEST_CASE("ablation: count validation") {
    const auto split = small_split();
    CHECK_THROWS_AS(sample_count_ablation({}, DenoiserModel{}, split, 3, SynthesisOptions{}, tiny(), {}, 1), Error);
    CHECK_THROWS_AS(sample_count_ablation({}, DenoiserModel{}, split, 3, SynthesisOptions{}, tiny(), {0}, 1), Error);
}
