# behavior: sudoku-fixed-3x3
def solve_sudoku(grid, width, height):
    n = len(grid)
    board = [row[:] for row in grid]

    def allowed(r, c, v):
        for i in range(n):
            if board[r][i] == v or board[i][c] == v:
                return False
        br, bc = 3 * (r // 3), 3 * (c // 3)
        for i in range(3):
            for j in range(3):
                rr, cc = br + i, bc + j
                if rr < n and cc < n and board[rr][cc] == v:
                    return False
        return True

    def solve():
        for r in range(n):
            for c in range(n):
                if board[r][c] == 0:
                    for v in range(1, n + 1):
                        if allowed(r, c, v):
                            board[r][c] = v
                            if solve():
                                return True
                            board[r][c] = 0
                    return False
        return True

    solve()
    return board
