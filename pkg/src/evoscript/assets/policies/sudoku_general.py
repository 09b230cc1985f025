# behavior: sudoku-general
def solve_sudoku(grid, width, height):
    n = width * height
    board = [row[:] for row in grid]

    def allowed(r, c, v):
        for i in range(n):
            if board[r][i] == v or board[i][c] == v:
                return False
        br = (r // height) * height
        bc = (c // width) * width
        for i in range(height):
            for j in range(width):
                if board[br + i][bc + j] == v:
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
