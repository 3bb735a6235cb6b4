#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace restopo {

// Shortcut i:j adds the output of layer i (0 = network input) to the output
// of layer j, after layer j's linear map.
struct Shortcut {
    int from = 0;
    int to = 0;
    friend auto operator<=>(const Shortcut&, const Shortcut&) = default;
};

class Topology {
public:
    Topology() = default;
    Topology(int depth, std::vector<Shortcut> shortcuts);

    static Topology plain(int depth) { return Topology(depth, {}); }
    static Topology cascaded(int depth);
    static Topology single(int depth, int from, int to) { return Topology(depth, {{from, to}}); }
    // Accepts "none", "cascaded", or pairs like "0:2" / "1:2+2:3".
    static Topology parse(int depth, std::string_view text);

    int depth() const { return depth_; }
    const std::vector<Shortcut>& shortcuts() const { return shortcuts_; }
    bool has(int from, int to) const;
    // Sources i of every shortcut i:layer, ascending.
    std::vector<int> sources_into(int layer) const;

    // "none" for the empty set, otherwise "i:j+k:l" in sorted order.
    std::string to_string() const;

    friend bool operator==(const Topology&, const Topology&) = default;

private:
    int depth_ = 1;
    std::vector<Shortcut> shortcuts_;
};

// Every topology of the given depth with exactly `count` shortcuts, in
// lexicographic order of their sorted shortcut lists.
std::vector<Topology> enumerate_topologies(int depth, int count);

}  // namespace restopo
