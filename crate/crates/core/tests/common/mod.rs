pub mod lasso_oracle;
