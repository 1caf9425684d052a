#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "bhp/dataset.hpp"
#include "bhp/errors.hpp"
#include "bhp/simulate.hpp"
#include "doctest.h"

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << data;
}

bhp::Dataset sample_dataset() {
    bhp::Dataset ds;
    ds.grid_step = 1.5;
    ds.t_start = 48.0;
    ds.units = "minutes";
    ds.count_mode = bhp::CountMode::Absolute;
    ds.provenance = "unit fixture";
    ds.counts = {{1, 2, 4, 9}, {1, 3, 0, 11}};
    ds.valid = {{1, 1, 1, 1}, {1, 1, 0, 1}};  // the 0 count is masked
    return ds;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("dataset validation") {
    auto ds = sample_dataset();
    CHECK_NOTHROW(ds.validate());

    SUBCASE("nonpositive grid step") {
        ds.grid_step = 0.0;
        CHECK_THROWS_AS(ds.validate(), bhp::input_error);
    }
    SUBCASE("ragged rows") {
        ds.counts[1].push_back(5.0);
        CHECK_THROWS_AS(ds.validate(), bhp::input_error);
    }
    SUBCASE("mask shape mismatch") {
        ds.valid[0].pop_back();
        CHECK_THROWS_AS(ds.validate(), bhp::input_error);
    }
    SUBCASE("unmasked nonpositive count") {
        ds.valid[1][2] = 1;  // exposes the 0
        CHECK_THROWS_AS(ds.validate(), bhp::input_error);
    }
    SUBCASE("absolute counts must be integral") {
        ds.counts[0][1] = 2.5;
        CHECK_THROWS_AS(ds.validate(), bhp::input_error);
        ds.count_mode = bhp::CountMode::Proportional;
        CHECK_NOTHROW(ds.validate());
    }
    SUBCASE("no trajectories") {
        ds.counts.clear();
        ds.valid.clear();
        CHECK_THROWS_AS(ds.validate(), bhp::input_error);
    }
}

TEST_CASE("dataset file round-trip") {
    const TempFile tmp{"dataset_roundtrip_tmp.txt"};
    const auto ds = sample_dataset();
    bhp::write_dataset(ds, tmp.path);

    const auto back = bhp::read_dataset(tmp.path);
    CHECK(back.grid_step == ds.grid_step);
    CHECK(back.t_start == ds.t_start);
    CHECK(back.units == ds.units);
    CHECK(back.count_mode == ds.count_mode);
    CHECK(back.provenance == ds.provenance);
    CHECK(back.valid == ds.valid);
    REQUIRE(back.n_data() == 2);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < 4; ++i)
            if (ds.valid[j][i]) CHECK(back.counts[j][i] == ds.counts[j][i]);

    // writing the reader's output reproduces the file byte for byte
    const TempFile tmp2{"dataset_roundtrip_tmp2.txt"};
    bhp::write_dataset(back, tmp2.path);
    CHECK(slurp(tmp.path) == slurp(tmp2.path));

    // full-precision values survive
    bhp::Dataset fine = ds;
    fine.count_mode = bhp::CountMode::Proportional;
    fine.counts[0][0] = 0.1234567890123456789;
    bhp::write_dataset(fine, tmp.path);
    CHECK(bhp::read_dataset(tmp.path).counts[0][0] == fine.counts[0][0]);
}

TEST_CASE("dataset reader rejects malformed files") {
    const TempFile tmp{"dataset_malformed_tmp.txt"};
    const std::string header =
        "# bhds 1\n# grid_step = 2\n# count_mode = absolute\n";

    SUBCASE("missing magic") {
        spit(tmp.path, "# grid_step = 2\n# count_mode = absolute\n1 2\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::io_error);
    }
    SUBCASE("unknown header key") {
        spit(tmp.path, "# bhds 1\n# gridstep = 2\n" + header.substr(9) + "1 2\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::io_error);
    }
    SUBCASE("missing grid_step") {
        spit(tmp.path, "# bhds 1\n# count_mode = absolute\n1 2\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::io_error);
    }
    SUBCASE("missing count_mode") {
        spit(tmp.path, "# bhds 1\n# grid_step = 2\n1 2\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::io_error);
    }
    SUBCASE("bad count_mode") {
        spit(tmp.path, "# bhds 1\n# grid_step = 2\n# count_mode = fluorescent\n1 2\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::io_error);
    }
    SUBCASE("ragged data row") {
        spit(tmp.path, header + "1 2 4\n1 2\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::io_error);
    }
    SUBCASE("unparseable token") {
        spit(tmp.path, header + "1 2 four\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::io_error);
    }
    SUBCASE("no data rows") {
        spit(tmp.path, header);
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::io_error);
    }
    SUBCASE("nonpositive count is a data error") {
        spit(tmp.path, header + "1 -3\n2 4\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::input_error);
    }
    SUBCASE("non-integral absolute count is a data error") {
        spit(tmp.path, header + "1 3.5\n2 4\n");
        CHECK_THROWS_AS(bhp::read_dataset(tmp.path), bhp::input_error);
    }
    SUBCASE("proportional counts may be non-integral") {
        spit(tmp.path,
             "# bhds 1\n# grid_step = 2\n# count_mode = proportional\n1.5 3.25\n0.5 NA\n");
        const auto ds = bhp::read_dataset(tmp.path);
        CHECK(ds.counts[0][1] == 3.25);
        CHECK(ds.valid[1][1] == 0);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(bhp::read_dataset("no_such_dir/never.txt"), bhp::io_error);
    }
}

TEST_CASE("dataset from a simulated ensemble") {
    bhp::SimConfig cfg;
    cfg.seed = 99;
    cfg.grid_step = 0.4;
    cfg.n_grid = 12;
    cfg.pop_cap = 25;
    const bhp::GammaLifetime law(1.0, 1.0);
    const auto ens = bhp::simulate_ensemble(cfg, law, 6);
    const auto ds = bhp::dataset_from_ensemble(ens, "hours", "seed 99");

    CHECK_NOTHROW(ds.validate());
    CHECK(ds.grid_step == cfg.grid_step);
    CHECK(ds.t_start == 0.0);
    CHECK(ds.units == "hours");
    CHECK(ds.provenance == "seed 99");
    CHECK(ds.count_mode == bhp::CountMode::Absolute);
    REQUIRE(ds.n_data() == 6);
    REQUIRE(ds.n_times() == 13);  // grid indices 0..n_grid inclusive
    for (std::size_t j = 0; j < 6; ++j) {
        const auto& tr = ens.trajectories[j];
        for (std::size_t i = 0; i < 13; ++i) {
            const bool expect_valid = i < tr.valid_count();
            CHECK(ds.valid[j][i] == (expect_valid ? 1 : 0));
            if (expect_valid)
                CHECK(ds.counts[j][i] == static_cast<double>(tr.counts[i]));
        }
    }
}
