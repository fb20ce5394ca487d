/// Picks the first expression with the `parallel` feature, the second without.
#[macro_export]
#[doc(hidden)]
macro_rules! if_parallel {
    ($parallel:expr, $sequential:expr) => {{
        #[cfg(feature = "parallel")]
        {
            $parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            $sequential
        }
    }};
}
