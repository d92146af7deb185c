//! Synthetic worlds with a shared-plus-private latent structure.
//!
//! Each item carries shared factors visible to both views, CF-only factors
//! that drive interactions but never reach the content vector, and SEM-only
//! factors that shape the content vector but never drive interactions. The
//! `alpha` knob sets the shared-variance fraction on both sides.

use ndarray::{concatenate, Array2, Axis};
use rand_distr::{Distribution, Gumbel, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{kcore_filter_mapped, EmbeddingMatrix, Interaction, InteractionDataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::top_k_from;
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentWorldConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub k_shared: usize,
    pub k_cf: usize,
    pub k_sem: usize,
    /// Shared-variance fraction in `[0, 1]`.
    pub alpha: f64,
    pub interactions_per_user: usize,
    /// Std of the Gaussian noise added to content vectors.
    pub noise_sigma: f64,
    /// Content-vector dimension.
    pub d_sem: usize,
    /// Scale of the Gumbel perturbation applied to utilities before selection.
    pub gumbel_scale: f64,
    pub seed: u64,
}

impl Default for LatentWorldConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 400,
            k_shared: 16,
            k_cf: 16,
            k_sem: 16,
            alpha: 0.5,
            interactions_per_user: 20,
            noise_sigma: 0.0,
            d_sem: 64,
            gumbel_scale: 0.5,
            seed: 0,
        }
    }
}

impl LatentWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_shared + self.k_cf + self.k_sem == 0 {
            return Err(Error::Config("at least one latent dimension required".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.n_users == 0 || self.n_items == 0 {
            return Err(Error::Config("empty world".into()));
        }
        if self.interactions_per_user == 0 || self.interactions_per_user >= self.n_items {
            return Err(Error::Config(format!(
                "interactions_per_user must be in 1..{}, got {}",
                self.n_items, self.interactions_per_user
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if !(self.gumbel_scale >= 0.0 && self.gumbel_scale.is_finite()) {
            return Err(Error::Config("gumbel_scale must be non-negative".into()));
        }
        if self.d_sem < self.k_shared + self.k_sem {
            return Err(Error::Config(format!(
                "d_sem {} cannot hold {} orthonormal content directions",
                self.d_sem,
                self.k_shared + self.k_sem
            )));
        }
        Ok(())
    }
}

/// A generated world: latents, maps, and the emitted observable data.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentWorld {
    pub config: LatentWorldConfig,
    pub z_shared: Array2<f64>,
    pub z_cf: Array2<f64>,
    pub z_sem: Array2<f64>,
    pub user_shared: Array2<f64>,
    pub user_cf: Array2<f64>,
    /// `d_sem × (k_shared + k_sem)` with orthonormal columns.
    pub g_sem: Array2<f64>,
    pub dataset: InteractionDataset,
    pub semantic: EmbeddingMatrix,
    /// Items dropped because no user selected them, as original indices.
    pub dropped_items: Vec<u32>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

impl LatentWorld {
    /// `(√α z_shared, √(1−α) z_cf)` per item: the only item factors utilities depend on.
    pub fn utility_latents(&self) -> Array2<f64> {
        let a = self.config.alpha;
        concatenate(
            Axis(1),
            &[(&self.z_shared * a.sqrt()).view(), (&self.z_cf * (1.0 - a).sqrt()).view()],
        )
        .expect("same rows")
    }

    /// Noise-free utility matrix over surviving items.
    pub fn utilities(&self) -> Array2<f64> {
        let users = concatenate(Axis(1), &[self.user_shared.view(), self.user_cf.view()]).expect("same rows");
        users.dot(&self.utility_latents().t())
    }
}

/// Samples a world. Fully determined by `cfg` (including its seed).
pub fn generate_world(cfg: &LatentWorldConfig) -> Result<LatentWorld> {
    cfg.validate()?;
    let (nu, ni) = (cfg.n_users, cfg.n_items);
    let mut latent_rng = rng::substream(cfg.seed, "world-latents");
    let z_shared = gaussian(ni, cfg.k_shared, &mut latent_rng);
    let z_cf = gaussian(ni, cfg.k_cf, &mut latent_rng);
    let z_sem = gaussian(ni, cfg.k_sem, &mut latent_rng);
    let mut user_rng = rng::substream(cfg.seed, "world-users");
    let user_shared = gaussian(nu, cfg.k_shared, &mut user_rng);
    let user_cf = gaussian(nu, cfg.k_cf, &mut user_rng);

    let (sa, sb) = (cfg.alpha.sqrt(), (1.0 - cfg.alpha).sqrt());
    let utility = user_shared.dot(&z_shared.t()) * sa + user_cf.dot(&z_cf.t()) * sb;

    let mut noise_rng = rng::substream(cfg.seed, "world-gumbel");
    let gumbel = (cfg.gumbel_scale > 0.0).then(|| Gumbel::new(0.0, cfg.gumbel_scale).expect("positive scale"));
    let mut interactions = Vec::with_capacity(nu * cfg.interactions_per_user);
    for (u, row) in utility.outer_iter().enumerate() {
        let noisy: Vec<(u32, f64)> = row
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as u32, v + gumbel.map_or(0.0, |g| g.sample(&mut noise_rng))))
            .collect();
        let mut chosen = top_k_from(noisy, cfg.interactions_per_user);
        chosen.sort_unstable();
        interactions.extend(chosen.into_iter().map(|item| Interaction {
            user: u as u32,
            item,
            timestamp: None,
        }));
    }

    let mut map_rng = rng::substream(cfg.seed, "world-gsem");
    let content_dims = cfg.k_shared + cfg.k_sem;
    let g_sem = if content_dims > 0 {
        linalg::orthonormal_columns(&gaussian(cfg.d_sem, content_dims, &mut map_rng))
    } else {
        Array2::zeros((cfg.d_sem, 0))
    };
    let content = concatenate(Axis(1), &[(&z_shared * sa).view(), (&z_sem * sb).view()]).expect("same rows");
    let mut semantic = content.dot(&g_sem.t());
    if cfg.noise_sigma > 0.0 {
        let mut sem_rng = rng::substream(cfg.seed, "world-semnoise");
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
        semantic.mapv_inplace(|v| v + normal.sample(&mut sem_rng));
    }

    let dataset = InteractionDataset::from_parts(
        (0..nu).map(|u| format!("u{u}")).collect(),
        (0..ni).map(|i| format!("i{i}")).collect(),
        interactions,
    )?;
    let (dataset, map) = kcore_filter_mapped(&dataset, 1)?;
    let keep: Vec<usize> = map.items.iter().map(|&i| i as usize).collect();
    let dropped_items: Vec<u32> = {
        let mut alive = vec![false; ni];
        for &i in &keep {
            alive[i] = true;
        }
        (0..ni as u32).filter(|&i| !alive[i as usize]).collect()
    };
    if !dropped_items.is_empty() {
        log::info!("synthetic world: {} items never selected, dropped", dropped_items.len());
    }
    let pick = |m: &Array2<f64>| m.select(Axis(0), &keep);
    let world = LatentWorld {
        config: cfg.clone(),
        z_shared: pick(&z_shared),
        z_cf: pick(&z_cf),
        z_sem: pick(&z_sem),
        user_shared,
        user_cf,
        g_sem,
        semantic: EmbeddingMatrix::new(pick(&semantic))?,
        dataset,
        dropped_items,
    };
    debug_assert_eq!(world.semantic.n(), world.dataset.n_items());
    Ok(world)
}

/// JSON manifest describing a generated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldManifest {
    pub config: LatentWorldConfig,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub dropped_items: Vec<u32>,
}

impl From<&LatentWorld> for WorldManifest {
    fn from(w: &LatentWorld) -> Self {
        Self {
            config: w.config.clone(),
            users: w.dataset.n_users(),
            items: w.dataset.n_items(),
            interactions: w.dataset.len(),
            dropped_items: w.dropped_items.clone(),
        }
    }
}
