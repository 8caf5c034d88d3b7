#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "hiertax/checkpoint.hpp"
#include "hiertax/error.hpp"
#include "hiertax/model.hpp"
#include "hiertax/rng.hpp"
#include "hiertax/taxonomy.hpp"

#include "json.hpp"

namespace fs = std::filesystem;
using namespace hiertax;

namespace {

NamePath path(std::string c, std::string o, std::string f, std::string g,
              std::string s) {
    return {std::move(c), std::move(o), std::move(f), std::move(g), std::move(s)};
}

TaxonomyTree chain_tree() {
    std::vector<NamePath> paths = {
        path("C0", "O0", "Fa0", "Ge0", "Sp0"), path("C0", "O0", "Fa0", "Ge0", "Sp1"),
        path("C0", "O0", "Fa1", "Ge1", "Sp2"), path("C0", "O0", "Fa1", "Ge2", "Sp3"),
        path("C0", "O1", "Fa2", "Ge3", "Sp4"), path("C1", "O2", "Fa3", "Ge4", "Sp5"),
    };
    return TaxonomyTree::from_paths(paths);
}

CascadeModel small_model(const TaxonomyTree& tree, Variant variant, std::uint64_t seed) {
    ModelConfig config;
    config.variant = variant;
    config.feature_dim = 16;
    config.adapter_dim = 8;
    Rng rng(seed);
    return CascadeModel::build(config, tree, rng);
}

bool params_equal(CascadeModel& a, CascadeModel& b) {
    std::vector<ParamBlockRef> ba = a.param_blocks();
    std::vector<ParamBlockRef> bb = b.param_blocks();
    if (ba.size() != bb.size()) return false;
    for (std::size_t i = 0; i < ba.size(); ++i) {
        if (ba[i].name != bb[i].name) return false;
        if (*ba[i].values != *bb[i].values) return false;
    }
    return true;
}

// Decode -> mutate -> re-encode, to fabricate structurally broken files.
std::vector<std::uint8_t> tampered(const std::vector<std::uint8_t>& bytes,
                                   void (*mutate)(nlohmann::json&)) {
    nlohmann::json j = nlohmann::json::from_cbor(bytes);
    mutate(j);
    return nlohmann::json::to_cbor(j);
}

std::string thrown_message(const std::vector<std::uint8_t>& bytes) {
    try {
        checkpoint_from_bytes(bytes);
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("checkpoint round trip restores every parameter bit for bit") {
    TaxonomyTree tree = chain_tree();
    CascadeModel model = small_model(tree, Variant::HCOFGS, 5);
    std::vector<std::uint8_t> bytes = checkpoint_to_bytes(model, 0xfeedu);

    LoadedCheckpoint loaded = checkpoint_from_bytes(bytes);
    CHECK(loaded.config_checksum == 0xfeedu);
    CHECK(loaded.model.variant() == Variant::HCOFGS);
    CHECK(loaded.model.feature_dim() == 16);
    CHECK(loaded.model.has_adapter());
    CHECK(loaded.model.level_counts() == model.level_counts());
    CHECK(loaded.model.taxonomy_checksum() == tree.checksum());
    CHECK(params_equal(model, loaded.model));

    // Same parameters in, same bytes out: serialization is canonical.
    CHECK(checkpoint_to_bytes(loaded.model, 0xfeedu) == bytes);
}

TEST_CASE("flat adapterless models round trip too") {
    TaxonomyTree tree = chain_tree();
    ModelConfig config;
    config.variant = Variant::FS;
    config.feature_dim = 12;
    Rng rng(9);
    CascadeModel model = CascadeModel::build(config, tree, rng);
    LoadedCheckpoint loaded = checkpoint_from_bytes(checkpoint_to_bytes(model));
    CHECK(loaded.config_checksum == 0);
    CHECK_FALSE(loaded.model.has_adapter());
    CHECK(params_equal(model, loaded.model));
}

TEST_CASE("checkpoint files round trip through disk") {
    TaxonomyTree tree = chain_tree();
    CascadeModel model = small_model(tree, Variant::HCO, 11);
    fs::path dir = fs::temp_directory_path() / "hiertax_ckpt_test";
    fs::create_directories(dir);
    fs::path file = dir / "model.ckpt";
    save_checkpoint(model, file, 77);
    REQUIRE(fs::exists(file));
    LoadedCheckpoint loaded = load_checkpoint(file);
    CHECK(loaded.config_checksum == 77);
    CHECK(params_equal(model, loaded.model));
    fs::remove_all(dir);
}

TEST_CASE("loaded models predict identically to the originals") {
    TaxonomyTree tree = chain_tree();
    CascadeModel model = small_model(tree, Variant::HCOF, 13);
    LoadedCheckpoint loaded = checkpoint_from_bytes(checkpoint_to_bytes(model));

    Rng data_rng(3);
    Matrix features(2, 16);
    for (double& v : features.data) v = data_rng.normal();
    PredictedParentMasks masks(tree);
    std::vector<LevelOutput> a =
        cascade_forward(model, features, masks, false, nullptr, nullptr);
    std::vector<LevelOutput> b =
        cascade_forward(loaded.model, features, masks, false, nullptr, nullptr);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].probs.data == b[i].probs.data);
    }
}

TEST_CASE("shape drift between metadata and buffers is rejected by name") {
    TaxonomyTree tree = chain_tree();
    CascadeModel model = small_model(tree, Variant::HCO, 21);
    std::vector<std::uint8_t> bytes = checkpoint_to_bytes(model);

    // Widening feature_dim makes the stored adapter weights the wrong shape.
    std::string msg = thrown_message(
        tampered(bytes, [](nlohmann::json& j) { j["feature_dim"] = 17; }));
    CHECK(msg.find("adapter.weight") != std::string::npos);
    CHECK(msg.find("model expects") != std::string::npos);

    // Growing a level count breaks that head's output layer instead.
    msg = thrown_message(tampered(bytes, [](nlohmann::json& j) {
        j["level_counts"][1] = 4;  // order level actually has 3 taxa
    }));
    CHECK(msg.find("head.order") != std::string::npos);

    // A buffer whose byte payload disagrees with its own shape tag.
    msg = thrown_message(tampered(bytes, [](nlohmann::json& j) {
        auto& raw = j["params"]["adapter.bias"]["raw"].get_binary();
        raw.resize(raw.size() - 8);
    }));
    CHECK(msg.find("adapter.bias") != std::string::npos);
    CHECK(msg.find("holds 7 values, expected 8") != std::string::npos);

    // Deleting a buffer is called out by name.
    msg = thrown_message(tampered(bytes, [](nlohmann::json& j) {
        j["params"].erase("head.class.linear0.bias");
    }));
    CHECK(msg.find("missing buffer 'head.class.linear0.bias'") != std::string::npos);
}

TEST_CASE("foreign and damaged files fail loudly") {
    TaxonomyTree tree = chain_tree();
    std::vector<std::uint8_t> bytes =
        checkpoint_to_bytes(small_model(tree, Variant::HCO, 2));

    std::string msg = thrown_message(
        tampered(bytes, [](nlohmann::json& j) { j["format"] = "other-file"; }));
    CHECK(msg.find("not a checkpoint file") != std::string::npos);

    msg = thrown_message(tampered(bytes, [](nlohmann::json& j) { j["version"] = 2; }));
    CHECK(msg.find("unsupported checkpoint version 2") != std::string::npos);

    msg = thrown_message(
        tampered(bytes, [](nlohmann::json& j) { j.erase("taxonomy_checksum"); }));
    CHECK(msg.find("checkpoint field error") != std::string::npos);

    // Truncated CBOR cannot even parse.
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 10);
    CHECK(thrown_message(cut).find("checkpoint parse error") != std::string::npos);
    CHECK_THROWS_AS(checkpoint_from_bytes(cut), DataError);
    CHECK_THROWS_AS(checkpoint_from_bytes({}), DataError);
}

TEST_CASE("models refuse taxonomies they were not built against") {
    TaxonomyTree tree = chain_tree();
    CascadeModel model = small_model(tree, Variant::HCOFGS, 5);
    CHECK_NOTHROW(check_model_tree(model, tree));

    // One extra species changes both the checksum and the species count.
    std::vector<NamePath> paths = {
        path("C0", "O0", "Fa0", "Ge0", "Sp0"), path("C0", "O0", "Fa0", "Ge0", "Sp1"),
        path("C0", "O0", "Fa1", "Ge1", "Sp2"), path("C0", "O0", "Fa1", "Ge2", "Sp3"),
        path("C0", "O1", "Fa2", "Ge3", "Sp4"), path("C1", "O2", "Fa3", "Ge4", "Sp5"),
        path("C1", "O2", "Fa3", "Ge4", "Sp6"),
    };
    TaxonomyTree other = TaxonomyTree::from_paths(paths);
    try {
        check_model_tree(model, other);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("taxonomy has checksum") != std::string::npos);
    }
}
