//! Every example runs to completion.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!("../examples/", stringify!($name), ".rs"));

            #[test]
            fn runs() {
                run_example().unwrap();
            }
        }
    };
}

example!(sliding_windows);
example!(prompt_assembly);
example!(integrity_retry);
example!(record_replay);
example!(metrics_lda);
example!(end_to_end);
example!(merge_ablations);
