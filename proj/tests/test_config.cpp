#include <doctest.h>

#include <sstream>

#include "simcis/config.hpp"

using namespace simcis;

TEST_CASE("defaults carry the documented values") {
    Config c = Config::defaults();
    CHECK(c.get_int("model.dim") == 64);
    CHECK(c.get_int("model.queries") == 20);
    CHECK(c.get_int("model.levels") == 3);
    CHECK(c.get("model.attention_order") == "cross_first");
    CHECK(c.get_double("csl.weight") == 2.0);
    CHECK(c.get_double("qpa.selection_loss_weight") == 2.0);
    CHECK(c.get_int("vq.queue_capacity") == 20);
    CHECK(c.get_int("vq.per_batch") == 80);
    CHECK(c.get_double("infer.confidence_threshold") == 0.5);
    CHECK(c.get_double("loss.no_object_weight") == 0.1);
    CHECK(c.get_double("optim.base_lr") == 1e-4);
    CHECK(c.get_double("optim.incr_lr") == 5e-5);
    CHECK(c.get_int("plan.base_classes") == 8);
    CHECK(c.get_int("plan.incr_classes") == 2);
    CHECK(c.get_int("data.num_classes") == 16);
    CHECK(c.get_bool("qpa.enabled"));
    CHECK(c.get_bool("csl.enabled"));
    CHECK(c.get_bool("vq.enabled"));
    CHECK(c.get_bool("psd.enabled"));
    CHECK(!c.get_bool("qpa.freeze_old_prototypes"));
}

TEST_CASE("unknown keys are rejected with a suggestion") {
    Config c = Config::defaults();
    CHECK_THROWS_WITH_AS(c.set("model.dmi", "32"),
                         doctest::Contains("did you mean 'model.dim'"), ConfigError);
    CHECK_THROWS_WITH_AS(c.set("vq.capacity", "8"),
                         doctest::Contains("vq.queue_capacity"), ConfigError);
    CHECK_THROWS_AS(c.get("nope.nothing"), ConfigError);
}

TEST_CASE("values are validated per key type") {
    Config c = Config::defaults();
    CHECK_THROWS_AS(c.set("model.dim", "abc"), ConfigError);
    CHECK_THROWS_AS(c.set("model.dim", "6.5"), ConfigError);
    CHECK_THROWS_AS(c.set("csl.weight", "fast"), ConfigError);
    CHECK_THROWS_AS(c.set("csl.weight", "nan"), ConfigError);
    CHECK_THROWS_AS(c.set("qpa.enabled", "maybe"), ConfigError);
    CHECK_THROWS_AS(c.set("plan.order", "random"), ConfigError);
    CHECK_THROWS_AS(c.set("model.attention_order", "both"), ConfigError);

    c.set("qpa.enabled", "0");
    CHECK(!c.get_bool("qpa.enabled"));
    c.set("qpa.enabled", "on");
    CHECK(c.get_bool("qpa.enabled"));
    c.set("plan.order", "descending");
    CHECK(c.get("plan.order") == "descending");
}

TEST_CASE("text parsing handles comments, blanks, and spacing") {
    const std::string text =
        "# experiment\n"
        "\n"
        "model.dim = 16\n"
        "csl.weight=3.5   # inline comment\n"
        "  plan.seed =  9  \n"
        "model.dim = 24\n";  // last write wins
    Config c = parse_config_text(text);
    CHECK(c.get_int("model.dim") == 24);
    CHECK(c.get_double("csl.weight") == 3.5);
    CHECK(c.get_int("plan.seed") == 9);
    CHECK(c.get_int("model.queries") == 20);  // untouched default
}

TEST_CASE("parse errors carry the line number") {
    CHECK_THROWS_WITH_AS(parse_config_text("model.dim = 8\nbogus line\n"),
                         doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("\n\nmodel.dmi = 8\n"),
                         doctest::Contains("line 3"), ConfigError);
}

TEST_CASE("overrides apply in order and reject malformed entries") {
    Config c = Config::defaults();
    apply_overrides(c, {"model.dim=32", "model.dim=48", "vq.enabled=false"});
    CHECK(c.get_int("model.dim") == 48);
    CHECK(!c.get_bool("vq.enabled"));
    CHECK_THROWS_AS(apply_overrides(c, {"model.dim"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(c, {"model.dmi=8"}), ConfigError);
}

TEST_CASE("serialization is canonical and round-trips") {
    Config c = Config::defaults();
    c.set("csl.weight", "2.50");
    const std::string text = c.serialize();
    Config back = parse_config_text(text);
    CHECK(back == c);
    CHECK(back.hash() == c.hash());

    // Sorted unique lines, one per known key.
    std::istringstream in(text);
    std::string line, prev;
    size_t lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        CHECK(prev < line);
        prev = line;
    }
    CHECK(lines == Config::known_keys().size());
}

TEST_CASE("equivalent numeric spellings hash identically") {
    Config a = Config::defaults();
    Config b = Config::defaults();
    a.set("model.dim", "064");
    b.set("model.dim", "64");
    CHECK(a.hash() == b.hash());

    a.set("optim.base_lr", "0.0001");
    b.set("optim.base_lr", "1e-4");
    CHECK(a == b);
    CHECK(a.hash() == b.hash());

    b.set("optim.base_lr", "2e-4");
    CHECK(a.hash() != b.hash());
    CHECK(b.hash().size() == 16);
}
