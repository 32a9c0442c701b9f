import mpmath as mp
mp.mp.dps = 50
def y(t):
    t = mp.mpf(t)
    # projection of (2+t, 2) onto {y1^2 + y2 <= 1}; constraint active
    g = lambda lam: ((2+t)/(1+2*lam))**2 + 1 - lam
    lam = mp.findroot(g, 1.5)
    return [(2+t)/(1+2*lam), 2-lam], lam
y0, lam0 = y(0)
print("y0", [mp.nstr(c, 20) for c in y0], "lam0", mp.nstr(lam0, 20))
h = mp.mpf('0.1')
K = 12
qs = []
for k in range(K+1):
    hk = h / 2**k
    yk, _ = y(hk)
    qs.append([(yk[i]-y0[i])/hk for i in range(2)])
# Richardson (first-order error model, factor 2)
T = [[q] for q in qs]
for k in range(1, K+1):
    for j in range(1, k+1):
        f = mp.mpf(2)**j
        T[k].append([(f*T[k][j-1][i] - T[k-1][j-1][i])/(f-1) for i in range(2)])
best = T[K][6]
print("fd oracle y'(0)", [mp.nstr(c, 17) for c in best])
print("diag", [mp.nstr(T[K][j][0], 17) for j in range(8)])
