// Independent expert-cost oracle for tests: plain cell BFS plus a facing
// fix-up, kept free of the library's planner. The cheapest way to use a
// target is to walk a shortest path to an adjacent cell, turn toward the
// target unless some shortest path already arrives facing it, then use.

#pragma once

#include "ompn/craft.hpp"

#include <deque>
#include <vector>

namespace craft_oracle {

inline int leg_cost(const ompn::craft::World& w, ompn::craft::Obj target) {
  constexpr int DX[4] = {0, 0, -1, 1};
  constexpr int DY[4] = {1, -1, 0, 0};
  const int width = w.width, height = w.height;
  std::vector<int> dist(width * height, -1);
  std::deque<int> q;
  dist[w.agent_y * width + w.agent_x] = 0;
  q.push_back(w.agent_y * width + w.agent_x);
  while (!q.empty()) {
    int c = q.front();
    q.pop_front();
    int x = c % width, y = c / width;
    for (int d = 0; d < 4; ++d) {
      int nx = x + DX[d], ny = y + DY[d];
      if (!w.in_bounds(nx, ny) || w.cell(nx, ny) >= 0) continue;
      int n = ny * width + nx;
      if (dist[n] != -1) continue;
      dist[n] = dist[c] + 1;
      q.push_back(n);
    }
  }
  int best = -1;
  for (int gy = 0; gy < height; ++gy)
    for (int gx = 0; gx < width; ++gx) {
      if (w.cell(gx, gy) != static_cast<int>(target)) continue;
      for (int d = 0; d < 4; ++d) {
        int cx = gx - DX[d], cy = gy - DY[d];
        if (!w.in_bounds(cx, cy)) continue;
        bool is_agent = cx == w.agent_x && cy == w.agent_y;
        if (!is_agent && w.cell(cx, cy) >= 0) continue;
        int dc = dist[cy * width + cx];
        if (dc < 0) continue;
        int turn;
        if (dc == 0) {
          turn = w.facing == d ? 0 : 1;
        } else {
          int px = cx - DX[d], py = cy - DY[d];
          bool arrive_facing = w.in_bounds(px, py) && w.cell(px, py) < 0 &&
                               dist[py * width + px] == dc - 1;
          turn = arrive_facing ? 0 : 1;
        }
        int cost = dc + turn + 1;
        if (best < 0 || cost < best) best = cost;
      }
    }
  return best;
}

}  // namespace craft_oracle
