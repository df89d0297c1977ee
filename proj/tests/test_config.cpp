#include "helpers.hpp"

#include "t4d/cli.hpp"
#include "t4d/config.hpp"
#include "t4d/harness.hpp"

#include <fstream>

using namespace t4d;
using namespace t4d::test;

TEST_CASE("sections, comments and typed getters") {
    const Config c = Config::parse(
        "# scene description\n"
        "top = 3\n"
        "[scene]\n"
        "object = two-blob   ; trailing comment\n"
        "gaussians = 48\n"
        "name = \"quoted value\"\n"
        "[render]\n"
        "  focal = 72.5\n"
        "flag = yes\n");
    CHECK(c.get_int("top", 0) == 3);
    CHECK(c.get("scene.object", "") == "two-blob");
    CHECK(c.get_int("scene.gaussians", 0) == 48);
    CHECK(c.get("scene.name", "") == "quoted value");
    CHECK(c.get_double("render.focal", 0) == 72.5);
    CHECK(c.get_bool("render.flag", false));
    CHECK(c.get_int("render.missing", 7) == 7);
    CHECK_FALSE(c.has("object"));
}

TEST_CASE("typed getters reject malformed values") {
    const Config c = Config::parse("[a]\nx = 1.5\ny = abc\nz = -2\n");
    CHECK_THROWS_AS(c.get_int("a.x", 0), InvalidArgument);
    CHECK_THROWS_AS(c.get_double("a.y", 0), InvalidArgument);
    CHECK_THROWS_AS(c.get_bool("a.y", false), InvalidArgument);
    CHECK_THROWS_AS(c.get_u64("a.z", 0), InvalidArgument);
    CHECK(c.get_int("a.z", 0) == -2);
}

TEST_CASE("syntax errors and unknown keys") {
    CHECK_THROWS_AS(Config::parse("[open\nx = 1\n"), InvalidArgument);
    const Config c = Config::parse("[scene]\ngaussians = 4\ntypo = 1\n");
    CHECK_THROWS_AS(c.require_known({"scene.gaussians"}), InvalidArgument);
    CHECK_NOTHROW(c.require_known({"scene.gaussians", "scene.typo"}));
    CHECK_THROWS_AS(Config::load(scratch_dir("config_missing") / "nope.ini"), IoError);
}

TEST_CASE("dump parses back to the same values") {
    Config c;
    c.set("scene.object", "ring");
    c.set("scene.gaussians", "12");
    c.set("render.width", "40");
    c.set("plain", "1");
    const Config back = Config::parse(c.dump());
    CHECK(back.values() == c.values());
}

TEST_CASE("scene spec round-trips through its config") {
    SceneSpec s;
    s.object = ObjectPreset::Ring;
    s.motion = MotionPreset::SinusoidalBend;
    s.gaussians = 20;
    s.amplitude = 0.25;
    s.frames = 6;
    s.feature_mode = FeatureMode::None;
    s.seed = 99;
    const SceneSpec t = SceneSpec::from_config(Config::parse(s.to_config().dump()));
    CHECK(t.object == s.object);
    CHECK(t.motion == s.motion);
    CHECK(t.gaussians == 20);
    CHECK(t.amplitude == 0.25);
    CHECK(t.frames == 6);
    CHECK(t.feature_mode == FeatureMode::None);
    CHECK(t.seed == 99);
    CHECK_THROWS_AS(SceneSpec::from_config(Config::parse("[scene]\nobject = cube\n")), InvalidArgument);
    CHECK_THROWS_AS(SceneSpec::from_config(Config::parse("[scene]\ncolour = 1\n")), InvalidArgument);
    SceneSpec bad;
    bad.gaussians = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("train config round-trips through its config") {
    TrainConfig t;
    t.iterations_rec = 123;
    t.lr_hex = 0.02;
    t.lr_final_ratio = 0.5;
    t.curriculum = false;
    t.model.hex.spatial_res = 33;
    t.model.render.cutoff_sigma = 4.0;
    t.seed = 5;
    const TrainConfig u = train_config_from(Config::parse(to_config(t).dump()));
    CHECK(u.iterations_rec == 123);
    CHECK(u.lr_hex == 0.02);
    CHECK(u.lr_final_ratio == 0.5);
    CHECK_FALSE(u.curriculum);
    CHECK(u.model.hex.spatial_res == 33);
    CHECK(u.model.render.cutoff_sigma == 4.0);
    CHECK(u.seed == 5);
    CHECK_THROWS_AS(train_config_from(Config::parse("[train]\nlr_final_ratio = 0\n")), InvalidArgument);
    CHECK_THROWS_AS(train_config_from(Config::parse("[train]\nunknown = 0\n")), InvalidArgument);
}
