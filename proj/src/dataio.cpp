#include "sdiff/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sdiff {

namespace {

std::vector<std::string> default_ids(std::size_t n) {
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = std::to_string(i);
    return ids;
}

bool is_numeric_token(std::string_view token) {
    if (token.empty()) return false;
    std::size_t i = (token[0] == '-' || token[0] == '+') ? 1 : 0;
    if (i == token.size()) return false;
    bool digit = false;
    for (; i < token.size(); ++i) {
        const auto ch = static_cast<unsigned char>(token[i]);
        if (std::isdigit(ch)) {
            digit = true;
        } else if (ch != '.' && ch != 'e' && ch != 'E' && ch != '-' && ch != '+') {
            return false;
        }
    }
    return digit;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

const char* tag_name(SplitTag tag) {
    switch (tag) {
        case SplitTag::Train: return "train";
        case SplitTag::Val: return "val";
        case SplitTag::Test: return "test";
    }
    return "?";
}

}  // namespace

InteractionMatrix::InteractionMatrix(std::vector<std::vector<ItemIndex>> rows, std::size_t n_items,
                                     std::vector<std::string> user_ids, std::vector<std::string> item_ids)
    : rows_(std::move(rows)), n_items_(n_items) {
    if (user_ids.empty()) user_ids = default_ids(rows_.size());
    if (item_ids.empty()) item_ids = default_ids(n_items_);
    require(user_ids.size() == rows_.size(), "invalid_argument", "user id map size does not match row count");
    require(item_ids.size() == n_items_, "invalid_argument", "item id map size does not match item count");
    user_ids_ = std::move(user_ids);
    item_ids_ = std::move(item_ids);

    user_degrees_.assign(rows_.size(), 0.0);
    item_degrees_.assign(n_items_, 0.0);
    for (std::size_t u = 0; u < rows_.size(); ++u) {
        auto& r = rows_[u];
        std::sort(r.begin(), r.end());
        r.erase(std::unique(r.begin(), r.end()), r.end());
        for (const auto i : r) {
            require(i < n_items_, "invalid_argument", "item index out of range in row " + std::to_string(u));
            item_degrees_[i] += 1.0;
        }
        user_degrees_[u] = static_cast<double>(r.size());
        n_interactions_ += r.size();
    }

    user_lookup_.reserve(user_ids_.size());
    for (std::size_t u = 0; u < user_ids_.size(); ++u) {
        const bool fresh = user_lookup_.emplace(user_ids_[u], static_cast<UserIndex>(u)).second;
        require(fresh, "invalid_argument", "duplicate user id '" + user_ids_[u] + "'");
    }
    item_lookup_.reserve(item_ids_.size());
    for (std::size_t i = 0; i < item_ids_.size(); ++i) {
        const bool fresh = item_lookup_.emplace(item_ids_[i], static_cast<ItemIndex>(i)).second;
        require(fresh, "invalid_argument", "duplicate item id '" + item_ids_[i] + "'");
    }
}

std::optional<UserIndex> InteractionMatrix::find_user(const std::string& external_id) const {
    const auto it = user_lookup_.find(external_id);
    if (it == user_lookup_.end()) return std::nullopt;
    return it->second;
}

std::optional<ItemIndex> InteractionMatrix::find_item(const std::string& external_id) const {
    const auto it = item_lookup_.find(external_id);
    if (it == item_lookup_.end()) return std::nullopt;
    return it->second;
}

InteractionMatrix InteractionMatrix::with_rows(std::vector<std::vector<ItemIndex>> rows) const {
    return InteractionMatrix(std::move(rows), n_items_, user_ids_, item_ids_);
}

std::uint64_t InteractionMatrix::content_hash() const noexcept {
    Fnv1a h;
    h.update_value(static_cast<std::uint64_t>(rows_.size()));
    h.update_value(static_cast<std::uint64_t>(n_items_));
    for (const auto& r : rows_) {
        h.update_value(static_cast<std::uint64_t>(r.size()));
        if (!r.empty()) h.update(r.data(), r.size() * sizeof(ItemIndex));
    }
    return h.digest();
}

InputFormat parse_format(std::string_view name) {
    if (name == "auto") return InputFormat::Auto;
    if (name == "tsv") return InputFormat::Tsv;
    if (name == "csv") return InputFormat::Csv;
    throw Error("invalid_argument", "unknown format '" + std::string(name) + "' (expected auto, tsv or csv)");
}

InteractionMatrix load_interactions(const std::filesystem::path& path, InputFormat format, LoadReport* report) {
    std::ifstream in(path);
    require(in.good(), "io_error", "cannot read interactions file '" + path.string() + "'");

    char sep = 0;
    if (format == InputFormat::Tsv) sep = '\t';
    if (format == InputFormat::Csv) sep = ',';
    if (format == InputFormat::Auto) {
        const auto ext = path.extension().string();
        if (ext == ".csv") sep = ',';
        if (ext == ".tsv") sep = '\t';
    }

    std::unordered_map<std::string, UserIndex> users;
    std::unordered_map<std::string, ItemIndex> items;
    std::vector<std::string> user_ids;
    std::vector<std::string> item_ids;
    std::vector<std::vector<ItemIndex>> rows;
    LoadReport local;

    std::string line;
    std::size_t line_no = 0;
    bool first_record = true;
    while (std::getline(in, line)) {
        ++line_no;
        const auto text = trim(line);
        if (text.empty() || text.front() == '#') {
            ++local.skipped_lines;
            continue;
        }
        if (sep == 0) sep = text.find('\t') != std::string_view::npos ? '\t' : ',';

        const auto fields = split_fields(text, sep);
        if (first_record) {
            first_record = false;
            if (!is_numeric_token(fields.front())) {
                ++local.skipped_lines;  // header
                continue;
            }
        }
        if (fields.size() < 2 || fields[0].empty() || fields[1].empty()) {
            throw Error("malformed_record", path.string() + ":" + std::to_string(line_no) +
                                                ": expected at least user and item fields");
        }

        std::string uid(fields[0]);
        std::string iid(fields[1]);
        auto [uit, new_user] = users.try_emplace(uid, static_cast<UserIndex>(user_ids.size()));
        if (new_user) {
            user_ids.push_back(uid);
            rows.emplace_back();
        }
        auto [iit, new_item] = items.try_emplace(iid, static_cast<ItemIndex>(item_ids.size()));
        if (new_item) item_ids.push_back(iid);
        rows[uit->second].push_back(iit->second);
        ++local.records;
    }
    require(local.records > 0, "empty_input", "zero interactions in '" + path.string() + "'");

    const auto n_items = item_ids.size();
    InteractionMatrix m(std::move(rows), n_items, std::move(user_ids), std::move(item_ids));
    local.duplicates = local.records - m.n_interactions();
    if (report) *report = local;
    return m;
}

std::size_t DatasetSplit::count(SplitTag tag) const noexcept {
    const auto& sets = tag == SplitTag::Train ? train : (tag == SplitTag::Val ? val : test);
    std::size_t n = 0;
    for (const auto& s : sets) n += s.size();
    return n;
}

DatasetSplit split_dataset(const InteractionMatrix& m, SplitRatios ratios, std::uint64_t seed) {
    require(ratios.train > 0 && ratios.val > 0 && ratios.test > 0, "invalid_argument", "split ratios must be positive");
    require(std::abs(ratios.train + ratios.val + ratios.test - 1.0) < 1e-9, "invalid_argument",
            "split ratios must sum to 1");

    DatasetSplit split;
    split.seed = seed;
    const auto n_users = m.n_users();
    split.train.resize(n_users);
    split.val.resize(n_users);
    split.test.resize(n_users);

    for (std::size_t u = 0; u < n_users; ++u) {
        const auto row = m.row(static_cast<UserIndex>(u));
        std::vector<ItemIndex> items(row.begin(), row.end());
        if (items.size() < 3) {
            split.train[u] = std::move(items);
            continue;
        }
        Rng rng = Rng::stream(seed, u);
        rng.shuffle(items.begin(), items.end());

        const double n = static_cast<double>(items.size());
        const auto n_test = static_cast<std::size_t>(std::lround(ratios.test * n));
        const auto n_val = static_cast<std::size_t>(std::lround(ratios.val * n));
        const auto n_train = items.size() - n_test - n_val;

        auto first = items.begin();
        split.train[u].assign(first, first + static_cast<std::ptrdiff_t>(n_train));
        split.val[u].assign(first + static_cast<std::ptrdiff_t>(n_train),
                            first + static_cast<std::ptrdiff_t>(n_train + n_val));
        split.test[u].assign(first + static_cast<std::ptrdiff_t>(n_train + n_val), items.end());
        std::sort(split.train[u].begin(), split.train[u].end());
        std::sort(split.val[u].begin(), split.val[u].end());
        std::sort(split.test[u].begin(), split.test[u].end());
    }
    return split;
}

InteractionMatrix train_matrix(const InteractionMatrix& m, const DatasetSplit& split) {
    require(split.n_users() == m.n_users(), "hash_mismatch", "split does not match the interaction matrix");
    return m.with_rows(split.train);
}

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split) {
    std::ofstream out(path);
    require(out.good(), "io_error", "cannot write split manifest '" + path.string() + "'");
    out << "# seed " << split.seed << '\n';
    const std::pair<SplitTag, const std::vector<std::vector<ItemIndex>>*> parts[] = {
        {SplitTag::Train, &split.train}, {SplitTag::Val, &split.val}, {SplitTag::Test, &split.test}};
    for (std::size_t u = 0; u < split.n_users(); ++u) {
        for (const auto& [tag, sets] : parts) {
            for (const auto i : (*sets)[u]) out << u << ' ' << i << ' ' << tag_name(tag) << '\n';
        }
    }
    require(out.good(), "io_error", "failed writing split manifest '" + path.string() + "'");
}

DatasetSplit read_split_manifest(const std::filesystem::path& path, std::size_t n_users, std::size_t n_items) {
    std::ifstream in(path);
    require(in.good(), "io_error", "cannot read split manifest '" + path.string() + "'");
    DatasetSplit split;
    split.train.resize(n_users);
    split.val.resize(n_users);
    split.test.resize(n_users);

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        if (line.front() == '#') {
            std::string word;
            fields >> word >> word;
            if (word == "seed") fields >> split.seed;
            continue;
        }
        std::uint64_t u = 0;
        std::uint64_t i = 0;
        std::string tag;
        if (!(fields >> u >> i >> tag)) {
            throw Error("malformed_record", path.string() + ":" + std::to_string(line_no) + ": bad split record");
        }
        require(u < n_users && i < n_items, "hash_mismatch",
                path.string() + ":" + std::to_string(line_no) + ": index outside the loaded data");
        auto item = static_cast<ItemIndex>(i);
        if (tag == "train") {
            split.train[u].push_back(item);
        } else if (tag == "val") {
            split.val[u].push_back(item);
        } else if (tag == "test") {
            split.test[u].push_back(item);
        } else {
            throw Error("malformed_record", path.string() + ":" + std::to_string(line_no) + ": unknown tag " + tag);
        }
    }
    for (auto* sets : {&split.train, &split.val, &split.test}) {
        for (auto& s : *sets) std::sort(s.begin(), s.end());
    }
    return split;
}

std::vector<ItemIndex> mask_condition(std::span<const ItemIndex> support, double p_mask, Rng& rng) {
    require(p_mask >= 0.0 && p_mask <= 1.0, "invalid_argument", "mask probability must lie in [0, 1]");
    std::vector<ItemIndex> kept;
    kept.reserve(support.size());
    for (const auto i : support) {
        if (!rng.bernoulli(p_mask)) kept.push_back(i);
    }
    return kept;
}

}  // namespace sdiff
