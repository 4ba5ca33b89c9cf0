#include "kdetect/config.hpp"

#include "doctest.h"
#include "kdetect/errors.hpp"
#include "support/test_support.hpp"

using namespace kdetect;

TEST_CASE("an empty config object yields every default") {
    const PipelineConfig cfg = parse_pipeline_config("{}");
    CHECK(cfg.train.learning_rate == 0.001);
    CHECK(cfg.train.batch_size == 120);
    CHECK(cfg.train.beta1 == 0.9);
    CHECK(cfg.train.weight_decay == 0.00005);
    CHECK(cfg.train.epochs == 100);
    CHECK(cfg.selftrain.n_benchmarks == 10);
    CHECK(cfg.selftrain.test_fraction == 0.20);
    CHECK(cfg.selftrain.pseudo_conf_threshold == 0.25);
    CHECK(cfg.eval.iou_threshold == 0.5);
    CHECK(cfg.normalization.p_hi == 99.0);
    CHECK_NOTHROW(validate(cfg, false));
}

TEST_CASE("sections override defaults and unknown keys fail fast") {
    const PipelineConfig cfg = parse_pipeline_config(R"({
        "train": {"epochs": 12, "image_size": 64, "grid_size": 4},
        "selftrain": {"n_benchmarks": 3},
        "eval": {"operating_conf": 0.25}
    })");
    CHECK(cfg.train.epochs == 12);
    CHECK(cfg.train.image_size == 64);
    CHECK(cfg.selftrain.n_benchmarks == 3);
    CHECK(cfg.eval.operating_conf == 0.25);

    CHECK_THROWS_AS(parse_pipeline_config(R"({"trian": {}})"), ConfigError);
    CHECK_THROWS_AS(parse_pipeline_config(R"({"train": {"lerning_rate": 0.1}})"), ConfigError);
    CHECK_THROWS_AS(parse_pipeline_config("not json"), ConfigError);
}

TEST_CASE("range validation catches invariant violations") {
    PipelineConfig cfg = parse_pipeline_config(R"({"selftrain": {"test_fraction": 1.0}})");
    CHECK_THROWS_AS(validate(cfg, false), ConfigError);

    cfg = parse_pipeline_config(R"({"train": {"image_size": 100, "grid_size": 7}})");
    CHECK_THROWS_AS(validate(cfg, false), ConfigError);

    cfg = parse_pipeline_config(R"({"normalization": {"background_fraction": 0.9}})");
    CHECK_THROWS_AS(validate(cfg, false), ConfigError);
}

TEST_CASE("path resolution is part of validation") {
    test::TempDir tmp("cfg");
    PipelineConfig cfg = parse_pipeline_config(R"({"paths": {"data_root": "/nonexistent/x",
                                                            "output_root": "/tmp/o"}})");
    CHECK_THROWS_AS(validate(cfg, true), ConfigError);
    cfg.data_root = tmp.path();
    CHECK_NOTHROW(validate(cfg, true));
}
