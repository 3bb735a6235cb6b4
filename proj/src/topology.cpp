#include "restopo/topology.hpp"

#include <algorithm>
#include <charconv>
#include <stdexcept>

namespace restopo {

Topology::Topology(int depth, std::vector<Shortcut> shortcuts)
    : depth_(depth), shortcuts_(std::move(shortcuts)) {
    if (depth_ < 1) throw std::invalid_argument("Topology: depth must be >= 1");
    for (const auto& s : shortcuts_) {
        if (s.from < 0 || s.from >= s.to || s.to > depth_)
            throw std::invalid_argument("Topology: invalid shortcut " + std::to_string(s.from) + ":" +
                                        std::to_string(s.to) + " for depth " + std::to_string(depth_));
    }
    std::sort(shortcuts_.begin(), shortcuts_.end());
    if (std::adjacent_find(shortcuts_.begin(), shortcuts_.end()) != shortcuts_.end())
        throw std::invalid_argument("Topology: duplicate shortcut");
}

Topology Topology::cascaded(int depth) {
    std::vector<Shortcut> s;
    for (int k = 1; k <= depth; ++k) s.push_back({k - 1, k});
    return Topology(depth, std::move(s));
}

Topology Topology::parse(int depth, std::string_view text) {
    if (text == "none" || text.empty()) return plain(depth);
    if (text == "cascaded") return cascaded(depth);
    std::vector<Shortcut> out;
    auto parse_int = [&](std::string_view part) {
        int v = 0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc() || ptr != part.data() + part.size())
            throw std::invalid_argument("Topology::parse: bad layer index '" + std::string(part) + "'");
        return v;
    };
    while (!text.empty()) {
        const auto plus = text.find('+');
        std::string_view item = text.substr(0, plus);
        const auto colon = item.find(':');
        if (colon == std::string_view::npos)
            throw std::invalid_argument("Topology::parse: expected i:j, got '" + std::string(item) + "'");
        out.push_back({parse_int(item.substr(0, colon)), parse_int(item.substr(colon + 1))});
        if (plus == std::string_view::npos) break;
        text.remove_prefix(plus + 1);
    }
    return Topology(depth, std::move(out));
}

bool Topology::has(int from, int to) const {
    return std::binary_search(shortcuts_.begin(), shortcuts_.end(), Shortcut{from, to});
}

std::vector<int> Topology::sources_into(int layer) const {
    std::vector<int> src;
    for (const auto& s : shortcuts_)
        if (s.to == layer) src.push_back(s.from);
    std::sort(src.begin(), src.end());
    return src;
}

std::string Topology::to_string() const {
    if (shortcuts_.empty()) return "none";
    std::string out;
    for (const auto& s : shortcuts_) {
        if (!out.empty()) out += '+';
        out += std::to_string(s.from) + ":" + std::to_string(s.to);
    }
    return out;
}

std::vector<Topology> enumerate_topologies(int depth, int count) {
    std::vector<Shortcut> all;
    for (int i = 0; i < depth; ++i)
        for (int j = i + 1; j <= depth; ++j) all.push_back({i, j});
    std::sort(all.begin(), all.end());
    std::vector<Topology> out;
    if (count < 0 || count > static_cast<int>(all.size())) return out;
    std::vector<bool> pick(all.size(), false);
    std::fill(pick.begin(), pick.begin() + count, true);
    do {
        std::vector<Shortcut> s;
        for (std::size_t k = 0; k < all.size(); ++k)
            if (pick[k]) s.push_back(all[k]);
        out.emplace_back(depth, std::move(s));
    } while (std::prev_permutation(pick.begin(), pick.end()));
    return out;
}

}  // namespace restopo
