//! Gauss–Legendre quadrature and composite-panel helpers.
//!
//! All continuum integrals in this crate (radial Hankel transforms, polar
//! kernel quadrature, principal values) are built from Gauss–Legendre rules
//! on panels.  Nodes are generated by Newton iteration on the Legendre
//! recurrence; weights are 2 / ((1−x²) Pₙ′(x)²).

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi-type initial guess, then Newton on Pₙ.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pd(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Pₙ(x) and Pₙ′(x) via the three-term recurrence.
fn legendre_pd(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature rule: node/weight pairs on an arbitrary union of intervals.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Gauss–Legendre rule with `n` nodes mapped to [a, b].
    pub fn on_interval(a: f64, b: f64, n: usize) -> Rule {
        let (x, w) = gauss_legendre(n);
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        Rule {
            nodes: x.iter().map(|&t| c + h * t).collect(),
            weights: w.iter().map(|&t| h * t).collect(),
        }
    }

    /// Composite rule over consecutive panels `edges[0] < edges[1] < …`,
    /// `n` Gauss–Legendre nodes per panel.
    pub fn composite(edges: &[f64], n: usize) -> Rule {
        let mut rule = Rule { nodes: Vec::new(), weights: Vec::new() };
        for pair in edges.windows(2) {
            let sub = Rule::on_interval(pair[0], pair[1], n);
            rule.nodes.extend(sub.nodes);
            rule.weights.extend(sub.weights);
        }
        rule
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Panel edges graded geometrically from `a` towards `b`: the panel adjacent
/// to `a` has length `(b−a)·ratio^(n−1)`, each following panel grows by
/// 1/ratio.  Used to resolve integrands that vary rapidly near one endpoint.
pub fn graded_edges(a: f64, b: f64, n_panels: usize, ratio: f64) -> Vec<f64> {
    assert!(n_panels >= 1 && ratio > 0.0 && ratio < 1.0);
    let mut rel = Vec::with_capacity(n_panels + 1);
    rel.push(0.0);
    let mut len = 1.0;
    let mut total = 0.0;
    let mut lens = Vec::with_capacity(n_panels);
    for _ in 0..n_panels {
        lens.push(len);
        total += len;
        len /= ratio;
    }
    let mut acc = 0.0;
    for l in &lens {
        acc += l / total;
        rel.push(acc);
    }
    rel.iter().map(|&t| a + (b - a) * t).collect()
}
