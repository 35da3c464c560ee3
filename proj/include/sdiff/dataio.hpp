#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdiff/common.hpp"
#include "sdiff/rng.hpp"

namespace sdiff {

enum class InputFormat { Auto, Tsv, Csv };

/// Sparse binary user x item matrix. Rows hold sorted, duplicate-free item
/// indices; dense indices follow first appearance in the source file.
class InteractionMatrix {
public:
    InteractionMatrix() = default;

    /// Rows are sorted and deduplicated on construction. `user_ids` and
    /// `item_ids` may be empty, in which case the decimal dense index is used.
    InteractionMatrix(std::vector<std::vector<ItemIndex>> rows, std::size_t n_items,
                      std::vector<std::string> user_ids = {}, std::vector<std::string> item_ids = {});

    std::size_t n_users() const noexcept { return rows_.size(); }
    std::size_t n_items() const noexcept { return n_items_; }
    std::size_t n_interactions() const noexcept { return n_interactions_; }

    std::span<const ItemIndex> row(UserIndex u) const { return rows_.at(u); }
    const std::vector<std::vector<ItemIndex>>& rows() const noexcept { return rows_; }

    const std::vector<double>& user_degrees() const noexcept { return user_degrees_; }
    const std::vector<double>& item_degrees() const noexcept { return item_degrees_; }

    const std::string& user_id(UserIndex u) const { return user_ids_.at(u); }
    const std::string& item_id(ItemIndex i) const { return item_ids_.at(i); }
    std::optional<UserIndex> find_user(const std::string& external_id) const;
    std::optional<ItemIndex> find_item(const std::string& external_id) const;

    /// Same ID maps, different rows (used to carve the training matrix out of
    /// the full one).
    InteractionMatrix with_rows(std::vector<std::vector<ItemIndex>> rows) const;

    /// FNV-1a over shape and row contents; identifies the graph a basis was
    /// built from.
    std::uint64_t content_hash() const noexcept;

private:
    std::vector<std::vector<ItemIndex>> rows_;
    std::size_t n_items_ = 0;
    std::size_t n_interactions_ = 0;
    std::vector<double> user_degrees_;
    std::vector<double> item_degrees_;
    std::vector<std::string> user_ids_;
    std::vector<std::string> item_ids_;
    std::unordered_map<std::string, UserIndex> user_lookup_;
    std::unordered_map<std::string, ItemIndex> item_lookup_;
};

struct LoadReport {
    std::size_t records = 0;
    std::size_t duplicates = 0;
    std::size_t skipped_lines = 0;
};

/// Reads `user<sep>item[<sep>rating[<sep>timestamp]]` records. Extra fields
/// are ignored; duplicate pairs collapse to one interaction. With
/// InputFormat::Auto the separator is taken from the extension (.csv ->
/// comma, .tsv -> tab) or sniffed from the first record.
InteractionMatrix load_interactions(const std::filesystem::path& path, InputFormat format = InputFormat::Auto,
                                    LoadReport* report = nullptr);

InputFormat parse_format(std::string_view name);

enum class SplitTag : std::uint8_t { Train, Val, Test };

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct DatasetSplit {
    std::vector<std::vector<ItemIndex>> train;
    std::vector<std::vector<ItemIndex>> val;
    std::vector<std::vector<ItemIndex>> test;
    std::uint64_t seed = 0;

    std::size_t n_users() const noexcept { return train.size(); }
    std::size_t count(SplitTag tag) const noexcept;
};

/// Per-user uniform random partition. Per user the test and validation sizes
/// are round(ratio * n) and training takes the rest; users with fewer than 3
/// interactions keep everything in train. Each user draws from its own
/// stream derived from `seed`, so the result does not depend on user order.
DatasetSplit split_dataset(const InteractionMatrix& m, SplitRatios ratios, std::uint64_t seed);

/// Training-only matrix with the same ID maps; the item graph is built from it.
InteractionMatrix train_matrix(const InteractionMatrix& m, const DatasetSplit& split);

/// Writes `user_idx item_idx split_tag` lines (tags: train, val, test).
void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_split_manifest(const std::filesystem::path& path, std::size_t n_users, std::size_t n_items);

/// Independently drops each interaction with probability `p_mask`. The
/// binary vector is given by its sorted support; the result is a new support
/// that is always a subset of the input.
std::vector<ItemIndex> mask_condition(std::span<const ItemIndex> support, double p_mask, Rng& rng);

}  // namespace sdiff
